//! Drives the `noisecap` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisecap::cli::Manifest;

pub const TINY_CONFIG: &str = r#"
seed = 3
noise_groups = 5

[world]
n_scenes = 40

[model]
d_model = 32
prefix_len = 4
n_layers = 1
n_heads = 2

[model.mapper]
hidden = 32

[train]
steps = 30
batch_size = 8
warmup_steps = 5
val_every = 10

[decode]
beam_width = 2

[sweep]
grid = [0.0, 0.01]
supervised_steps = 30
"#;

pub const COMMANDS: [&str; 6] = ["gen-data", "estimate-eps", "train", "eval", "sweep", "report"];

pub fn noisecap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisecap")).args(args).output().expect("spawn noisecap")
}

pub fn describe(o: &Output) -> String {
    format!(
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

/// Writes the tiny config into `dir` and runs every command against `dir/run`.
pub fn run_pipeline(dir: &Path) -> Result<PathBuf, String> {
    let config = dir.join("tiny.toml");
    std::fs::write(&config, TINY_CONFIG).map_err(|e| e.to_string())?;
    let out = dir.join("run");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    for cmd in COMMANDS {
        let r = noisecap(&["--config", c, "--out", o, cmd]);
        if r.status.code() != Some(0) {
            return Err(format!("{cmd} failed: {}", describe(&r)));
        }
    }
    Ok(out)
}

/// Reruns each command from its own manifest and compares output hashes.
/// Returns the number of files compared.
pub fn rerun_from_manifests(run: &Path) -> Result<usize, String> {
    let mut compared = 0;
    for cmd in COMMANDS {
        let path = run.join("manifests").join(format!("{cmd}.json"));
        let before = Manifest::read(&path).map_err(|e| format!("{cmd}: {e}"))?;
        let r = noisecap(&["--config", path.to_str().unwrap(), "--force", cmd]);
        if r.status.code() != Some(0) {
            return Err(format!("rerun {cmd}: {}", describe(&r)));
        }
        let after = Manifest::read(&path).map_err(|e| format!("{cmd}: {e}"))?;
        if before.outputs.is_empty() {
            return Err(format!("{cmd}: manifest lists no outputs"));
        }
        if before.outputs != after.outputs {
            return Err(format!("{cmd}: outputs differ\nbefore {:#?}\nafter {:#?}", before.outputs, after.outputs));
        }
        if before.inputs != after.inputs {
            return Err(format!("{cmd}: inputs differ"));
        }
        compared += after.outputs.len();
    }
    Ok(compared)
}
