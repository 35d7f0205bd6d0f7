// Closed caption grammar:
//
//   caption := frame? object (relation object (connective object)?)? style?
//   object  := "a" size color shape
//
// Paraphrases of one scene differ by frame, synonym, relation wording and
// connective; styled captions append one phrase from the style lexicon.

use super::scene::{Attributes, Color, Relation, Scene, SceneObject, Shape, Size, Style};

pub const ARTICLE: &str = "a";

pub const FRAMES: &[&[&str]] = &[
    &[],
    &["there", "is"],
    &["we", "see"],
    &["picture", "of"],
    &["photo", "of"],
    &["image", "of"],
    &["here", "is"],
    &["look", "at"],
];

pub const CONNECTIVES: &[&str] = &["and", "with", "plus"];

pub fn shape_forms(s: Shape) -> &'static [&'static str] {
    match s {
        Shape::Circle => &["circle", "disc"],
        Shape::Square => &["square", "box"],
        Shape::Triangle => &["triangle"],
        Shape::Star => &["star"],
        Shape::Heart => &["heart"],
        Shape::Cross => &["cross"],
        Shape::Diamond => &["diamond", "rhombus"],
        Shape::Hexagon => &["hexagon"],
    }
}

pub fn color_forms(c: Color) -> &'static [&'static str] {
    match c {
        Color::Red => &["red", "crimson"],
        Color::Blue => &["blue", "navy"],
        Color::Green => &["green"],
        Color::Yellow => &["yellow", "golden"],
        Color::Purple => &["purple", "violet"],
        Color::Orange => &["orange"],
        Color::Black => &["black"],
        Color::White => &["white"],
    }
}

pub fn size_forms(s: Size) -> &'static [&'static str] {
    match s {
        Size::Small => &["small", "little", "tiny"],
        Size::Medium => &["medium", "midsize"],
        Size::Big => &["big", "large", "huge"],
    }
}

pub fn relation_forms(r: Relation) -> &'static [&'static [&'static str]] {
    match r {
        Relation::Above => &[&["above"], &["over"]],
        Relation::Below => &[&["below"], &["under"]],
        Relation::LeftOf => &[&["left", "of"], &["to", "the", "left", "of"]],
        Relation::RightOf => &[&["right", "of"], &["to", "the", "right", "of"]],
        Relation::InFrontOf => &[&["in", "front", "of"], &["before"]],
        Relation::Behind => &[&["behind"], &["in", "back", "of"]],
    }
}

pub fn style_phrases(style: Style) -> &'static [&'static [&'static str]] {
    match style {
        Style::Neutral => &[],
        Style::RomanticLike => &[&["with", "love"], &["so", "dreamy"], &["so", "romantic"], &["how", "sweet"]],
        Style::HumorousLike => &[&["how", "silly"], &["like", "clowns"], &["so", "goofy"], &["very", "funny"]],
    }
}

/// Words whose presence marks a caption as styled.
pub fn style_markers(style: Style) -> &'static [&'static str] {
    match style {
        Style::Neutral => &[],
        Style::RomanticLike => &["love", "dreamy", "romantic", "sweet"],
        Style::HumorousLike => &["silly", "clowns", "goofy", "funny"],
    }
}

/// Style whose marker lexicon `words` hits, if any.
pub fn marker_style<S: AsRef<str>>(words: &[S]) -> Option<Style> {
    [Style::RomanticLike, Style::HumorousLike]
        .into_iter()
        .find(|&st| words.iter().any(|w| style_markers(st).contains(&w.as_ref())))
}

/// Every word the grammar can emit, in a fixed order.
pub fn lexicon() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = vec![ARTICLE];
    let mut push = |w: &'static str| {
        if !words.contains(&w) {
            words.push(w);
        }
    };
    FRAMES.iter().flat_map(|f| f.iter()).for_each(|w| push(w));
    Size::ALL.iter().flat_map(|&s| size_forms(s)).for_each(|w| push(w));
    Color::ALL.iter().flat_map(|&c| color_forms(c)).for_each(|w| push(w));
    Shape::ALL.iter().flat_map(|&s| shape_forms(s)).for_each(|w| push(w));
    Relation::ALL.iter().flat_map(|&r| relation_forms(r).iter().flat_map(|f| f.iter())).for_each(|w| push(w));
    CONNECTIVES.iter().for_each(|w| push(w));
    [Style::RomanticLike, Style::HumorousLike]
        .iter()
        .flat_map(|&s| style_phrases(s).iter().flat_map(|f| f.iter()))
        .for_each(|w| push(w));
    words
}

/// Semantic identity of a word as seen by the text encoder. Synonyms share a
/// meaning key; `content` separates attribute-bearing words from glue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordMeaning {
    pub key: String,
    pub content: bool,
}

pub fn word_meaning(word: &str) -> WordMeaning {
    for &s in Size::ALL {
        if size_forms(s).contains(&word) {
            return WordMeaning { key: format!("size:{}", s.name()), content: true };
        }
    }
    for &c in Color::ALL {
        if color_forms(c).contains(&word) {
            return WordMeaning { key: format!("color:{}", c.name()), content: true };
        }
    }
    for &s in Shape::ALL {
        if shape_forms(s).contains(&word) {
            return WordMeaning { key: format!("shape:{}", s.name()), content: true };
        }
    }
    let relation = match word {
        "above" | "over" => Some(Relation::Above),
        "below" | "under" => Some(Relation::Below),
        "left" => Some(Relation::LeftOf),
        "right" => Some(Relation::RightOf),
        "front" | "before" => Some(Relation::InFrontOf),
        "behind" | "back" => Some(Relation::Behind),
        _ => None,
    };
    if let Some(r) = relation {
        return WordMeaning { key: format!("relation:{}", r.name()), content: true };
    }
    if let Some(st) = marker_style(&[word]) {
        return WordMeaning { key: format!("style:{}:{word}", st.name()), content: false };
    }
    WordMeaning { key: format!("word:{word}"), content: false }
}

pub fn is_shape_word(word: &str) -> bool {
    Shape::ALL.iter().any(|&s| shape_forms(s).contains(&word))
}

/// One concrete surface realization of a scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Paraphrase {
    pub frame: usize,
    /// Per object: (size form, color form, shape form) indices.
    pub objects: Vec<[usize; 3]>,
    pub relation_form: usize,
    pub connective: usize,
    pub style_phrase: usize,
}

fn radices(scene: &Scene, style: Style) -> Vec<usize> {
    let mut r = vec![FRAMES.len()];
    for o in &scene.objects {
        r.push(size_forms(o.size).len());
        r.push(color_forms(o.color).len());
        r.push(shape_forms(o.shape).len());
    }
    if let Some(rel) = scene.relation {
        r.push(relation_forms(rel).len());
    }
    if scene.objects.len() >= 3 {
        r.push(CONNECTIVES.len());
    }
    if style != Style::Neutral {
        r.push(style_phrases(style).len());
    }
    r
}

/// Number of distinct captions the grammar can produce for `scene`.
pub fn capacity(scene: &Scene, style: Style) -> u64 {
    radices(scene, style).iter().map(|&r| r as u64).product()
}

/// Mixed-radix decoding of `index` in `[0, capacity)` into a paraphrase.
pub fn paraphrase_at(scene: &Scene, style: Style, mut index: u64) -> Paraphrase {
    let mut digits = radices(scene, style).into_iter().map(|r| {
        let d = (index % r as u64) as usize;
        index /= r as u64;
        d
    });
    let frame = digits.next().unwrap_or(0);
    let objects = scene
        .objects
        .iter()
        .map(|_| [digits.next().unwrap_or(0), digits.next().unwrap_or(0), digits.next().unwrap_or(0)])
        .collect();
    let relation_form = if scene.relation.is_some() { digits.next().unwrap_or(0) } else { 0 };
    let connective = if scene.objects.len() >= 3 { digits.next().unwrap_or(0) } else { 0 };
    let style_phrase = if style != Style::Neutral { digits.next().unwrap_or(0) } else { 0 };
    Paraphrase { frame, objects, relation_form, connective, style_phrase }
}

/// A fixed set of neutral paraphrases, one per frame, cycling synonyms.
pub fn canonical_paraphrases(scene: &Scene) -> Vec<Paraphrase> {
    (0..FRAMES.len())
        .map(|i| Paraphrase {
            frame: i,
            objects: scene
                .objects
                .iter()
                .map(|o| {
                    [i % size_forms(o.size).len(), i % color_forms(o.color).len(), i % shape_forms(o.shape).len()]
                })
                .collect(),
            relation_form: scene.relation.map_or(0, |r| i % relation_forms(r).len()),
            connective: i % CONNECTIVES.len(),
            style_phrase: 0,
        })
        .collect()
}

pub fn realize(scene: &Scene, p: &Paraphrase, style: Style) -> Vec<&'static str> {
    let mut words: Vec<&'static str> = FRAMES[p.frame].to_vec();
    for (i, (o, forms)) in scene.objects.iter().zip(&p.objects).enumerate() {
        if i == 1 {
            if let Some(r) = scene.relation {
                words.extend_from_slice(relation_forms(r)[p.relation_form]);
            }
        } else if i == 2 {
            words.push(CONNECTIVES[p.connective]);
        }
        words.push(ARTICLE);
        words.push(size_forms(o.size)[forms[0]]);
        words.push(color_forms(o.color)[forms[1]]);
        words.push(shape_forms(o.shape)[forms[2]]);
    }
    if style != Style::Neutral {
        words.extend_from_slice(style_phrases(style)[p.style_phrase]);
    }
    words
}

/// Result of reading attributes back out of a caption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Parsed {
    Attributes { attributes: Attributes, style: Style },
    Unparseable,
}

impl Parsed {
    pub fn attributes(&self) -> Option<&Attributes> {
        match self {
            Parsed::Attributes { attributes, .. } => Some(attributes),
            Parsed::Unparseable => None,
        }
    }
}

/// Parses a whitespace-separated caption. Never fails: anything outside the
/// grammar is reported as [`Parsed::Unparseable`].
pub fn parse_caption<S: AsRef<str>>(words: &[S]) -> Parsed {
    let words: Vec<&str> = words.iter().map(|w| w.as_ref()).collect();
    parse_words(&words).map_or(Parsed::Unparseable, |(attributes, style)| Parsed::Attributes { attributes, style })
}

fn parse_words(words: &[&str]) -> Option<(Attributes, Style)> {
    let mut rest = words;
    let mut style = Style::Neutral;
    'styles: for st in [Style::RomanticLike, Style::HumorousLike] {
        for phrase in style_phrases(st) {
            if rest.ends_with(phrase) && rest.len() > phrase.len() {
                rest = &rest[..rest.len() - phrase.len()];
                style = st;
                break 'styles;
            }
        }
    }
    if let Some(f) = FRAMES.iter().filter(|f| !f.is_empty()).find(|f| rest.starts_with(f)) {
        rest = &rest[f.len()..];
    }
    let mut objects = vec![take_object(&mut rest)?];
    let mut relation = None;
    if !rest.is_empty() {
        let (r, n) = Relation::ALL
            .iter()
            .flat_map(|&r| relation_forms(r).iter().map(move |f| (r, *f)))
            .filter(|(_, f)| rest.starts_with(f))
            .max_by_key(|(_, f)| f.len())
            .map(|(r, f)| (r, f.len()))?;
        rest = &rest[n..];
        relation = Some(r);
        objects.push(take_object(&mut rest)?);
        if !rest.is_empty() {
            if !CONNECTIVES.contains(&rest[0]) {
                return None;
            }
            rest = &rest[1..];
            objects.push(take_object(&mut rest)?);
        }
    }
    rest.is_empty().then_some((Attributes { objects, relation }, style))
}

fn take_object(rest: &mut &[&str]) -> Option<SceneObject> {
    let [art, size, color, shape, ..] = **rest else { return None };
    if art != ARTICLE {
        return None;
    }
    let size = *Size::ALL.iter().find(|&&s| size_forms(s).contains(&size))?;
    let color = *Color::ALL.iter().find(|&&c| color_forms(c).contains(&color))?;
    let shape = *Shape::ALL.iter().find(|&&s| shape_forms(s).contains(&shape))?;
    *rest = &rest[4..];
    Some(SceneObject { shape, color, size })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene3() -> Scene {
        Scene {
            scene_id: 0,
            objects: vec![
                SceneObject { shape: Shape::Circle, color: Color::Red, size: Size::Big },
                SceneObject { shape: Shape::Square, color: Color::Blue, size: Size::Small },
                SceneObject { shape: Shape::Star, color: Color::Green, size: Size::Medium },
            ],
            relation: Some(Relation::LeftOf),
        }
    }

    #[test]
    fn single_object_phrase_parses() {
        let p = parse_caption(&["a", "big", "red", "circle"]);
        let a = p.attributes().unwrap();
        assert_eq!(a.objects, vec![SceneObject { shape: Shape::Circle, color: Color::Red, size: Size::Big }]);
        assert_eq!(a.relation, None);
    }

    #[test]
    fn gibberish_is_unparseable() {
        assert_eq!(parse_caption(&["circle", "a", "of", "the", "red"]), Parsed::Unparseable);
        assert_eq!(parse_caption::<&str>(&[]), Parsed::Unparseable);
        assert_eq!(parse_caption(&["a", "big", "red", "circle", "with"]), Parsed::Unparseable);
    }

    #[test]
    fn every_paraphrase_parses_back_to_scene() {
        let s = scene3();
        for style in Style::ALL.iter().copied() {
            let cap = capacity(&s, style);
            for idx in (0..cap).step_by(37) {
                let words = realize(&s, &paraphrase_at(&s, style, idx), style);
                match parse_caption(&words) {
                    Parsed::Attributes { attributes, style: got } => {
                        assert_eq!(attributes, s.attributes(), "{words:?}");
                        assert_eq!(got, style);
                    }
                    Parsed::Unparseable => panic!("unparseable: {words:?}"),
                }
            }
        }
    }

    #[test]
    fn longest_caption_fits_default_length() {
        let s = scene3();
        let longest = (0..capacity(&s, Style::RomanticLike))
            .map(|i| realize(&s, &paraphrase_at(&s, Style::RomanticLike, i), Style::RomanticLike).len())
            .max()
            .unwrap();
        // bos + words + eos within 24 positions
        assert!(longest + 2 <= 24, "{longest}");
    }

    #[test]
    fn canonical_paraphrases_are_distinct() {
        let s = scene3();
        let texts: std::collections::HashSet<_> =
            canonical_paraphrases(&s).iter().map(|p| realize(&s, p, Style::Neutral).join(" ")).collect();
        assert_eq!(texts.len(), FRAMES.len());
    }

    #[test]
    fn synonyms_share_meaning() {
        assert_eq!(word_meaning("big"), word_meaning("huge"));
        assert_eq!(word_meaning("front").key, word_meaning("before").key);
        assert!(!word_meaning("of").content);
        assert!(!word_meaning("dreamy").content);
        assert_ne!(word_meaning("dreamy").key, word_meaning("goofy").key);
    }
}
