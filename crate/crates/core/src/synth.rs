//! Deterministic synthetic corpora for tests and demos.
//!
//! The bilingual document generator builds a linearly separable binary
//! problem: protest-flavored word sets against everyday-news word sets,
//! disjoint between classes, in two languages.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Instance};

const EN_PROTEST: &[&str] = &[
    "protest",
    "march",
    "rally",
    "strike",
    "demonstration",
    "crowd",
    "chanting",
    "banners",
    "occupation",
    "picket",
];
const EN_CALM: &[&str] = &[
    "market", "weather", "recipe", "football", "concert", "museum", "earnings", "festival",
    "harvest", "railway",
];
const ES_PROTEST: &[&str] = &[
    "protesta",
    "marcha",
    "huelga",
    "manifestacion",
    "multitud",
    "pancartas",
    "consignas",
    "bloqueo",
    "piquete",
    "paro",
];
const ES_CALM: &[&str] = &[
    "mercado",
    "clima",
    "receta",
    "futbol",
    "concierto",
    "museo",
    "ganancias",
    "festival",
    "cosecha",
    "ferrocarril",
];
const FILLER: &[&str] = &["the", "in", "of", "on", "at", "la", "el", "en", "de", "y"];

/// `n` labeled documents, split evenly between English and Spanish and
/// between the two classes. Same seed, same corpus.
pub fn separable_bilingual_docs(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lang = if i % 2 == 0 { "en" } else { "es" };
        let label = u8::from(i % 4 < 2);
        let content: &[&str] = match (lang, label) {
            ("en", 1) => EN_PROTEST,
            ("en", 0) => EN_CALM,
            (_, 1) => ES_PROTEST,
            _ => ES_CALM,
        };
        let len = rng.gen_range(6..=12);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let pool = if rng.gen_bool(0.25) { FILLER } else { content };
            words.push(*pool.choose(&mut rng).expect("non-empty pool"));
        }
        out.push(Instance::Document(Document {
            id: format!("syn-{i}"),
            lang: lang.to_string(),
            text: words.join(" "),
            label: Some(label),
        }));
    }
    out
}

/// Two Gaussian clusters in `dim` dimensions with centers `separation`
/// standard deviations apart, labels 0/1, round-robin. Returns row-major
/// features plus labels.
pub fn two_cluster_points(
    n: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let shift = if label == 1 { separation } else { 0.0 };
        let mut row = Vec::with_capacity(dim);
        for d in 0..dim {
            // Box-Muller keeps the dependency surface small
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            row.push(z + if d == 0 { shift } else { 0.0 });
        }
        points.push(row);
        labels.push(label);
    }
    (points, labels)
}
