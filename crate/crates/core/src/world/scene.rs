use rand::Rng;
use serde::{Deserialize, Serialize};

macro_rules! attribute_enum {
    ($name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }
    };
}

attribute_enum!(Shape {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
    Star => "star",
    Heart => "heart",
    Cross => "cross",
    Diamond => "diamond",
    Hexagon => "hexagon",
});

attribute_enum!(Color {
    Red => "red",
    Blue => "blue",
    Green => "green",
    Yellow => "yellow",
    Purple => "purple",
    Orange => "orange",
    Black => "black",
    White => "white",
});

attribute_enum!(Size {
    Small => "small",
    Medium => "medium",
    Big => "big",
});

attribute_enum!(Relation {
    Above => "above",
    Below => "below",
    LeftOf => "left_of",
    RightOf => "right_of",
    InFrontOf => "in_front_of",
    Behind => "behind",
});

attribute_enum!(Style {
    Neutral => "neutral",
    RomanticLike => "romantic_like",
    HumorousLike => "humorous_like",
});

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
}

/// What a scene (or a caption) asserts: objects in mention order plus the
/// relation between the first two.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attributes {
    pub objects: Vec<SceneObject>,
    pub relation: Option<Relation>,
}

/// One element of the flattened attribute multiset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttributeItem {
    Shape { slot: usize, shape: Shape },
    Color { slot: usize, color: Color },
    Size { slot: usize, size: Size },
    Relation(Relation),
}

impl Attributes {
    pub fn items(&self) -> Vec<AttributeItem> {
        let mut out = Vec::with_capacity(self.objects.len() * 3 + 1);
        for (slot, o) in self.objects.iter().enumerate() {
            out.push(AttributeItem::Size { slot, size: o.size });
            out.push(AttributeItem::Color { slot, color: o.color });
            out.push(AttributeItem::Shape { slot, shape: o.shape });
        }
        if let Some(r) = self.relation {
            out.push(AttributeItem::Relation(r));
        }
        out.sort();
        out
    }

    /// Multiset inclusion over [`Attributes::items`].
    pub fn is_subset_of(&self, other: &Attributes) -> bool {
        let mut theirs = other.items();
        for item in self.items() {
            match theirs.iter().position(|x| *x == item) {
                Some(i) => {
                    theirs.swap_remove(i);
                }
                None => return false,
            }
        }
        true
    }
}

/// Ground-truth content of one synthetic "image".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub objects: Vec<SceneObject>,
    pub relation: Option<Relation>,
}

pub const MAX_OBJECTS: usize = 3;

impl Scene {
    pub fn sample<R: Rng>(scene_id: u64, rng: &mut R) -> Scene {
        let count = rng.random_range(1..=MAX_OBJECTS);
        let objects = (0..count)
            .map(|_| SceneObject {
                shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
                color: Color::ALL[rng.random_range(0..Color::ALL.len())],
                size: Size::ALL[rng.random_range(0..Size::ALL.len())],
            })
            .collect();
        let relation = (count >= 2).then(|| Relation::ALL[rng.random_range(0..Relation::ALL.len())]);
        Scene { scene_id, objects, relation }
    }

    pub fn attributes(&self) -> Attributes {
        Attributes { objects: self.objects.clone(), relation: self.relation }
    }

    pub fn is_valid(&self) -> bool {
        (1..=MAX_OBJECTS).contains(&self.objects.len()) && (self.relation.is_some() == (self.objects.len() >= 2))
    }
}

/// Probability that two independent draws from [`Scene::sample`] assert the
/// same attributes: the hit rate of a guess drawn from the scene prior.
pub fn chance_attribute_rate() -> f64 {
    let per_object = 1.0 / (Shape::ALL.len() * Color::ALL.len() * Size::ALL.len()) as f64;
    let p_count = 1.0 / MAX_OBJECTS as f64;
    (1..=MAX_OBJECTS)
        .map(|n| {
            let rel = if n >= 2 { 1.0 / Relation::ALL.len() as f64 } else { 1.0 };
            p_count * p_count * per_object.powi(n as i32) * rel
        })
        .sum()
}
