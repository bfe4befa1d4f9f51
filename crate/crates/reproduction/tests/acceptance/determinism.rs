use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use epn_cli::{run, Cli, Command};

use crate::Outcome;

const CE: &str = r#"
seeds = [0, 1]
[data]
n_per_class = 200
ood = [{ kind = "noise" }, { kind = "constant" }, { kind = "oodomain" }, { kind = "holdout_classes", classes = [2] }]
[model]
kind = "ce"
hidden = [16, 16]
[train]
steps = 150
[ray]
directions = 3
[grid]
resolution = 9
[attack]
eps = [0.0, 0.3]
steps = 5
[embed]
hidden = [8]
[embed.train]
steps = 40
[embed.train.sgld]
steps = 5
"#;

const EPN: &str = r#"
seeds = [3]
[data]
n_per_class = 150
[model]
kind = "epn_m"
hidden = [16, 16]
[train]
steps = 60
buffer_capacity = 200
[train.sgld]
step_size = 0.1
steps = 5
[grid]
resolution = 9
[attack]
eps = [0.2]
steps = 3
"#;

const VERBS: [Command; 8] = [
    Command::Train,
    Command::EvalOod,
    Command::DiagnoseRay,
    Command::GridDensity,
    Command::Attack,
    Command::Calibrate,
    Command::EmbedDensity,
    Command::GenData,
];

fn snapshot(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            snapshot(&p, out);
        } else {
            out.insert(p.clone(), fs::read(&p).unwrap());
        }
    }
}

fn run_all(config: &Path, out: &Path, threads: Option<usize>, verbs: &[Command]) -> BTreeMap<PathBuf, Vec<u8>> {
    let _ = fs::remove_dir_all(out);
    for &command in verbs {
        let cli = Cli { config: Some(config.into()), seed_override: None, out: Some(out.into()), threads, command };
        run(&cli).unwrap_or_else(|e| panic!("{command:?}: {e:#}"));
    }
    let mut files = BTreeMap::new();
    snapshot(out, &mut files);
    files
}

pub fn run_check() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for (name, text, verbs) in [("ce", CE, &VERBS[..]), ("epn", EPN, &VERBS[..6])] {
        let cfg = dir.path().join(format!("{name}.toml"));
        fs::write(&cfg, text).unwrap();
        let out = dir.path().join(name);
        let first = run_all(&cfg, &out, None, verbs);
        let again = run_all(&cfg, &out, None, verbs);
        let sequential = run_all(&cfg, &out, Some(1), verbs);
        for other in [&again, &sequential] {
            if other.keys().ne(first.keys()) {
                differing.push(format!("{name}: file sets differ"));
            }
            for (path, bytes) in &first {
                compared += 1;
                if other.get(path) != Some(bytes) {
                    differing.push(path.strip_prefix(dir.path()).unwrap().display().to_string());
                }
            }
        }
    }
    Outcome::new(
        differing.is_empty() && compared > 0,
        format!("{compared} file comparisons over 8 commands (rerun and single-thread rerun); differing: {differing:?}"),
    )
}
