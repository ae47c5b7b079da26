//! Synthetic datasets and run configs written to a scratch directory.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

/// Two real features; the target is the source translated by (1, 1).
pub fn blob(dir: &Path, extra: &str) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let tgt: Vec<Vec<f64>> = src.iter().map(|r| vec![r[0] + 1.0, r[1] + 1.0]).collect();
    write(
        dir,
        "schema.toml",
        "[[feature]]\nname = \"x\"\nkind = \"real\"\n\n[[feature]]\nname = \"y\"\nkind = \"real\"\n",
    );
    write(dir, "source.csv", &csv(&["x", "y"], &src));
    write(dir, "target.csv", &csv(&["x", "y"], &tgt));
    write(
        dir,
        "blob.toml",
        &format!(
            "seed = 0\nrepeats = 1\n\n[data]\nkind = \"tabular\"\nschema = \"schema.toml\"\nsource = \"source.csv\"\ntarget = \"target.csv\"\n\n\
             [method]\nkind = \"k-cluster\"\nk = 1\n\n[optimizer]\nlearning_rate = 0.1\niterations = 100\nseed = 0\n{extra}"
        ),
    )
}

/// Groups g = 1 at {0} -> {2} and g = 2 at {10} -> {8}.
pub fn two_group(dir: &Path) -> PathBuf {
    write(
        dir,
        "schema.toml",
        "[[feature]]\nname = \"g\"\nkind = \"integer\"\nactionable = false\n\n[[feature]]\nname = \"v\"\nkind = \"real\"\n",
    );
    write(dir, "source.csv", "g,v\n1,0\n2,10\n");
    write(dir, "target.csv", "g,v\n1,2\n2,8\n");
    write(
        dir,
        "two.toml",
        "repeats = 1\n\n[data]\nkind = \"tabular\"\nschema = \"schema.toml\"\nsource = \"source.csv\"\ntarget = \"target.csv\"\n\n\
         [grouping]\nrule = \"by-attribute\"\nfeature = \"g\"\n\n[method]\nkind = \"ot\"\n\n\
         [optimizer]\nlearning_rate = 0.1\niterations = 5\nseed = 0\n",
    )
}

pub const PER_GROUP: usize = 16;

/// Source A sits at x = 0 and must move to x = 1, source B the reverse.
/// Flipping the unactionable `s` alone carries A onto target B and B onto
/// target A, which is the cheaper map overall.
pub fn opposing_shift(dir: &Path, mode: &str) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut jitter = || rng.random_range(-0.03..0.03);
    let a: Vec<Vec<f64>> = (0..PER_GROUP).map(|_| vec![0.0, jitter(), jitter(), jitter()]).collect();
    let b: Vec<Vec<f64>> = (0..PER_GROUP)
        .map(|_| vec![1.0, 1.0 + jitter(), 1.0 + jitter(), 1.0 + jitter()])
        .collect();
    let source: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
    let target: Vec<Vec<f64>> = b
        .iter()
        .map(|r| vec![0.0, r[1], r[2], r[3]])
        .chain(a.iter().map(|r| vec![1.0, r[1], r[2], r[3]]))
        .collect();
    let mut schema = String::from("[[feature]]\nname = \"s\"\nkind = \"boolean\"\nactionable = false\n");
    for x in ["x1", "x2", "x3"] {
        schema.push_str(&format!("\n[[feature]]\nname = \"{x}\"\nkind = \"real\"\n"));
    }
    let header = ["s", "x1", "x2", "x3"];
    write(dir, "schema.toml", &schema);
    write(dir, "source.csv", &csv(&header, &source));
    write(dir, "target.csv", &csv(&header, &target));
    write(
        dir,
        &format!("opposing-{mode}.toml"),
        &format!(
            "mode = \"{mode}\"\nrepeats = 1\n\n[data]\nkind = \"tabular\"\nschema = \"schema.toml\"\nsource = \"source.csv\"\ntarget = \"target.csv\"\n\n\
             [grouping]\nrule = \"by-attribute\"\nfeature = \"s\"\n\n[method]\nkind = \"k-cluster\"\nk = 2\n\n\
             [optimizer]\nlearning_rate = 1.0\niterations = 100\nseed = 0\n"
        ),
    )
}

const WORDS: [&str; 10] = ["horns", "spiky", "tail", "long", "the", "a", "blue", "wings", "very", "small"];

/// Target documents use "spiky" where source documents use "horns".
pub fn corpus(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut doc = |swap: bool| {
        let n = rng.random_range(3..9);
        (0..n)
            .map(|_| {
                let w = WORDS[rng.random_range(0..WORDS.len())];
                if swap && w == "horns" { "spiky" } else { w }
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut src = String::from("text,topic\n");
    let mut tgt = String::from("text,topic\n");
    for i in 0..30 {
        let topic = if i % 2 == 0 { "animals" } else { "colors" };
        src.push_str(&format!("{},{topic}\n", doc(false)));
        tgt.push_str(&format!("{},{topic}\n", doc(true)));
    }
    write(dir, "source.csv", &src);
    write(dir, "target.csv", &tgt);
    write(
        dir,
        "text.toml",
        "mode = \"gse\"\nrepeats = 1\n\n[data]\nkind = \"text\"\nsource = \"source.csv\"\ntarget = \"target.csv\"\ngroup_column = \"topic\"\nvocab_size = 8\n\n\
         [method]\nkind = \"k-cluster\"\nk = 2\n\n[optimizer]\nlearning_rate = 0.05\niterations = 50\nseed = 0\n",
    )
}
