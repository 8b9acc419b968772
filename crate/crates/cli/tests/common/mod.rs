#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use debias_core::embedding_io::{labels_path, save_embeddings, write_json, AttributeFamily, LabelsSidecar};
use debias_core::oracle::{gaussian_vector, rng, unit_vector, OracleRng};
use debias_core::{EmbeddingMatrix, ManifestEntry, PromptManifest, Role};
use nalgebra::DVector;
use rand::Rng;

pub fn debias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(args)
        .output()
        .expect("run debias")
}

/// Runs with `dir` as the working directory, so relative paths in the
/// arguments and in the printed output do not depend on where `dir` lives.
pub fn debias_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debias"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run debias")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn axis(d: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[i] = 1.0;
    v
}

fn normalize(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

pub fn save(dir: &Path, name: &str, tag: &str, entries: Vec<ManifestEntry>, cols: &[DVector<f64>]) -> PathBuf {
    let prefix = dir.join(name);
    let d = cols.first().map_or(1, |c| c.len());
    let m = EmbeddingMatrix::from_vectors(d, cols).unwrap();
    save_embeddings(&m, &PromptManifest::new(tag, entries), &prefix).unwrap();
    prefix
}

pub fn save_labels(prefix: &Path, sidecar: &LabelsSidecar) {
    write_json(labels_path(prefix), sidecar).unwrap();
}

/// Two-class problem where class prompts lean on a spurious direction `s`.
///
/// Axis 0 is the class direction `c`, axis 1 is `s`, axes 2..6 are nuisance
/// directions mixed into the spurious prompts so that they only partly cover
/// `s`. Minority groups (y=0 on a=1, y=1 on a=0) are pulled across the
/// decision boundary. Returns the prompt and image prefixes.
pub struct GroupFixture {
    pub prompts: PathBuf,
    pub images: PathBuf,
}

pub fn group_fixture(dir: &Path, seed: u64) -> GroupFixture {
    let d = 16;
    let mut r = rng(seed);
    let c = axis(d, 0);
    let s = axis(d, 1);
    let gamma = 3.0;
    let theta: f64 = 60f64.to_radians();

    let mut entries = Vec::new();
    let mut cols = Vec::new();
    for (y, name) in [(-1.0, "landbird"), (1.0, "waterbird")] {
        entries.push(ManifestEntry::new(format!("class/{name}"), format!("a photo of a {name}"), Role::Class).with_class(name));
        cols.push(normalize((&c + &s * gamma) * y));
    }
    for j in 0..4 {
        let a = if j % 2 == 0 { "land" } else { "water" };
        entries.push(
            ManifestEntry::new(format!("spurious/{j}"), format!("a {a} background {j}"), Role::Spurious).with_attribute(a),
        );
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        cols.push(normalize(&s * (sign * theta.cos()) + axis(d, 2 + j) * theta.sin()));
    }
    for (y, name) in [(-1.0, "landbird"), (1.0, "waterbird")] {
        for k in 0..2 {
            let pid = format!("{name}/{k}");
            let base = (&c + &s * gamma) * y;
            let jitter = |r: &mut OracleRng| gaussian_vector(r, d) * 0.02;
            entries.push(
                ManifestEntry::new(format!("pair/{pid}/land"), format!("a {name} on land {k}"), Role::PairLeft)
                    .with_class(name)
                    .with_pair(&pid),
            );
            cols.push(normalize(&base - &s * 1.5 + jitter(&mut r)));
            entries.push(
                ManifestEntry::new(format!("pair/{pid}/water"), format!("a {name} on water {k}"), Role::PairRight)
                    .with_class(name)
                    .with_pair(&pid),
            );
            cols.push(normalize(&base + &s * 1.5 + jitter(&mut r)));
        }
    }
    let prompts = save(dir, "groups_prompts", "synthetic", entries, &cols);

    let sizes = [(0, 0, 40), (0, 1, 10), (1, 0, 10), (1, 1, 40)];
    let mut img_entries = Vec::new();
    let mut img_cols = Vec::new();
    let (mut ys, mut as_) = (Vec::new(), Vec::new());
    for (y, a, n) in sizes {
        for i in 0..n {
            let ysign = if y == 1 { 1.0 } else { -1.0 };
            let asign = if a == 1 { 1.0 } else { -1.0 };
            let beta = r.random_range(0.5..1.5);
            let mut x = &c * ysign + &s * (asign * beta);
            let noise = gaussian_vector(&mut r, d);
            for k in 6..d {
                x[k] += 0.1 * noise[k];
            }
            img_entries.push(ManifestEntry::new(format!("img/{y}{a}/{i}"), format!("image {y}{a} {i}"), Role::Query));
            img_cols.push(x);
            ys.push(y);
            as_.push(a);
        }
    }
    let images = save(dir, "groups_images", "synthetic", img_entries, &img_cols);
    save_labels(
        &images,
        &LabelsSidecar {
            y: ys,
            a: as_,
            class_names: vec!["landbird".into(), "waterbird".into()],
            attribute_names: vec!["land".into(), "water".into()],
            families: Default::default(),
        },
    );
    GroupFixture { prompts, images }
}

/// Profession-style pairs: `normalize(p_k ± 0.3 g + noise)` for 100
/// professions `p_k`, split into 80 train and 20 held-out professions, plus
/// one target prompt per profession leaning towards `+g`.
pub struct ProfessionFixture {
    pub train: PathBuf,
    pub heldout: PathBuf,
    pub targets: PathBuf,
}

pub fn profession_fixture(dir: &Path, seed: u64) -> ProfessionFixture {
    let d = 32;
    let mut r = rng(seed);
    let g = unit_vector(&mut r, d);
    let professions: Vec<DVector<f64>> = (0..100).map(|_| unit_vector(&mut r, d)).collect();
    let pair_set = |range: std::ops::Range<usize>, name: &str, r: &mut OracleRng| {
        let mut entries = Vec::new();
        let mut cols = Vec::new();
        for k in range {
            let pid = format!("gender/{k:03}");
            let noise = 0.05 / (d as f64).sqrt();
            entries.push(ManifestEntry::new(format!("{pid}/male"), format!("a photo of a male profession {k}"), Role::PairLeft).with_pair(&pid));
            cols.push(normalize(&professions[k] + &g * 0.3 + gaussian_vector(r, d) * noise));
            entries.push(ManifestEntry::new(format!("{pid}/female"), format!("a photo of a female profession {k}"), Role::PairRight).with_pair(&pid));
            cols.push(normalize(&professions[k] - &g * 0.3 + gaussian_vector(r, d) * noise));
        }
        save(dir, name, "synthetic", entries, &cols)
    };
    let train = pair_set(0..80, "prof_train", &mut r);
    let heldout = pair_set(80..100, "prof_test", &mut r);
    let entries = (0..100)
        .map(|k| ManifestEntry::new(format!("target/{k:03}"), format!("a photo of profession {k}"), Role::Query))
        .collect();
    let cols: Vec<_> = professions.iter().map(|p| normalize(p + &g * 0.2)).collect();
    let targets = save(dir, "prof_targets", "synthetic", entries, &cols);
    ProfessionFixture { train, heldout, targets }
}

/// Images with a gender attribute `a` (2 values) and a race family (3
/// values), balanced in both; queries are random directions and each query
/// has a gender pair split along axis 0.
pub struct RetrievalFixture {
    pub images: PathBuf,
    pub queries: PathBuf,
    pub attributes: PathBuf,
    pub pairs: PathBuf,
}

pub fn retrieval_fixture(dir: &Path, seed: u64) -> RetrievalFixture {
    let d = 8;
    let mut r = rng(seed);
    let n = 60;
    let mut entries = Vec::new();
    let mut cols = Vec::new();
    let (mut a, mut race) = (Vec::new(), Vec::new());
    for i in 0..n {
        entries.push(ManifestEntry::new(format!("img/{i}"), format!("image {i}"), Role::Query));
        let gender = i % 2;
        let mut x = unit_vector(&mut r, d) * 0.3;
        x[0] += if gender == 0 { 1.0 } else { -1.0 };
        cols.push(x);
        a.push(gender);
        race.push(i % 3);
    }
    let images = save(dir, "ret_images", "synthetic", entries, &cols);
    let mut families = std::collections::BTreeMap::new();
    families.insert(
        "race".to_string(),
        AttributeFamily {
            names: vec!["r0".into(), "r1".into(), "r2".into()],
            values: race.clone(),
        },
    );
    save_labels(
        &images,
        &LabelsSidecar {
            y: vec![0; n],
            a,
            class_names: vec!["person".into()],
            attribute_names: vec!["male".into(), "female".into()],
            families,
        },
    );
    let q_entries = ["good", "evil", "smart"]
        .iter()
        .map(|c| ManifestEntry::new(format!("query/{c}"), format!("A photo of a {c} person."), Role::Query).with_class(*c))
        .collect();
    let q_cols: Vec<_> = (0..3).map(|_| unit_vector(&mut r, d)).collect();
    let queries = save(dir, "ret_queries", "synthetic", q_entries, &q_cols);
    let attr_entries = vec![
        ManifestEntry::new("attr/male", "A photo of a male.", Role::Attribute).with_attribute("male"),
        ManifestEntry::new("attr/man", "A photo of a man.", Role::Attribute).with_attribute("male"),
        ManifestEntry::new("attr/female", "A photo of a female.", Role::Attribute).with_attribute("female"),
    ];
    let attr_cols = vec![axis(d, 0), normalize(axis(d, 0) + axis(d, 1) * 0.1), -axis(d, 0)];
    let attributes = save(dir, "ret_attributes", "synthetic", attr_entries, &attr_cols);
    let mut pair_entries = Vec::new();
    let mut pair_cols = Vec::new();
    for (q, c) in q_cols.iter().zip(["good", "evil", "smart"]) {
        let pid = format!("gender/{c}");
        pair_entries.push(ManifestEntry::new(format!("{pid}/male"), format!("A photo of a {c} man."), Role::PairLeft).with_pair(&pid));
        pair_cols.push(normalize(q + axis(d, 0) * 0.3));
        pair_entries.push(ManifestEntry::new(format!("{pid}/female"), format!("A photo of a {c} woman."), Role::PairRight).with_pair(&pid));
        pair_cols.push(normalize(q - axis(d, 0) * 0.3));
    }
    let pairs = save(dir, "ret_pairs", "synthetic", pair_entries, &pair_cols);
    RetrievalFixture { images, queries, attributes, pairs }
}
