//! Stub providers and substitutability of the encoder interfaces.

use proptest::prelude::*;
use xspecies_core::embed::{HashSpeciesEncoder, HashTextEncoder, SpeciesEmbedding, SpeciesEncoder, TextEncoder, TextFeatures, MAX_TOKENS};
use xspecies_core::error::Result;
use xspecies_core::generator::{GenConfig, GenSample, Generator, InferConfig};
use xspecies_core::optim::{AdamConfig, AdamState};
use xspecies_core::rng;
use xspecies_core::skeleton::{canonical_topology, forward_kinematics_tpose, BoneLengths};
use xspecies_core::Matrix;

/// Cosine between the shipped-seed vectors for "wolf" and "horse".
const WOLF_HORSE_COSINE: f64 = 0.00968134164579657;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn species_vectors() {
    let e = HashSpeciesEncoder::default();
    assert_eq!(e.encode_species("Tiger").unwrap(), e.encode_species("tiger").unwrap());
    let wolf = e.encode_species("wolf").unwrap().0;
    let horse = e.encode_species("horse").unwrap().0;
    assert_eq!(wolf.len(), 64);
    assert!((norm(&wolf) - 1.0).abs() <= 1e-9);
    let c = cosine(&wolf, &horse);
    assert!(c < 0.9);
    assert!((c - WOLF_HORSE_COSINE).abs() <= 1e-12, "cosine {c:.17}");
    assert!(e.encode_species("  ").is_err());
}

#[test]
fn text_features() {
    let e = HashTextEncoder::default();
    let one = e.encode_text("gallops").unwrap();
    assert_eq!(one.words.rows(), 1);
    assert_eq!(one.sentence.as_slice(), one.words.row(0));
    let a = e.encode_text("a wolf runs fast").unwrap();
    let b = e.encode_text("fast runs wolf a").unwrap();
    assert_ne!(a.words, b.words);
    for (x, y) in a.sentence.iter().zip(&b.sentence) {
        assert!((x - y).abs() <= 1e-15);
    }
    let long: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    assert_eq!(e.encode_text(&long.join(" ")).unwrap().words.rows(), MAX_TOKENS);
    assert!(e.encode_text("   ").is_err());
}

proptest! {
    #[test]
    fn providers_are_pure(name in "[a-zA-Z]{1,12}", words in prop::collection::vec("[a-z]{1,8}", 1..40)) {
        let s = HashSpeciesEncoder::default();
        let v = s.encode_species(&name).unwrap();
        prop_assert!((norm(&v.0) - 1.0).abs() <= 1e-9);
        prop_assert_eq!(&v, &s.encode_species(&name).unwrap());
        let t = HashTextEncoder::default();
        let caption = words.join(" ");
        let f = t.encode_text(&caption).unwrap();
        prop_assert_eq!(f.words.rows(), words.len().min(MAX_TOKENS));
        prop_assert!(f.sentence.iter().chain(f.words.as_slice()).all(|x| x.is_finite()));
        prop_assert_eq!(f, t.encode_text(&caption).unwrap());
    }
}

/// An external-style encoder: fixed lookup table, nothing hashed.
struct MockEncoder {
    dim: usize,
}

impl SpeciesEncoder for MockEncoder {
    fn dim(&self) -> usize {
        self.dim
    }
    fn encode_species(&self, name: &str) -> Result<SpeciesEmbedding> {
        let mut v = vec![0.0; self.dim];
        v[name.len() % self.dim] = 1.0;
        Ok(SpeciesEmbedding(v))
    }
}

impl TextEncoder for MockEncoder {
    fn dim(&self) -> usize {
        self.dim
    }
    fn encode_text(&self, caption: &str) -> Result<TextFeatures> {
        let n = caption.split_whitespace().count().max(1);
        let words = Matrix::from_fn(n, self.dim, |r, c| ((r + 1) * (c + 2)) as f64 / 50.0);
        Ok(TextFeatures { sentence: vec![0.1; self.dim], words })
    }
}

#[test]
fn generator_runs_against_a_mock_provider() {
    let mock = MockEncoder { dim: 8 };
    let cfg = GenConfig {
        latent_dim: 8,
        text_dim: mock.dim,
        blocks: 1,
        heads: 2,
        ffn_width: 16,
        head_width: 16,
        head_blocks: 1,
        lambda_guide: 0.0,
        text_dropout: 0.5,
    };
    let mut g = Generator::new(cfg, 1).unwrap();
    let bones = BoneLengths([0.3; 24]);
    let tpose = forward_kinematics_tpose(&bones, &canonical_topology()).unwrap();
    let sample = GenSample {
        latents: rng::normal_matrix(&mut rng::seeded(2), 4, 8),
        tpose: tpose.clone(),
        text: mock.encode_text("a mock creature trots").unwrap(),
        bones,
    };
    let mut state = AdamState::new(&g.params);
    let losses = g.train_step(&[&sample], None, 0, &mut state, &AdamConfig::default()).unwrap();
    assert!(losses.total.is_finite());
    let z = g.infer(&mock.encode_text("trots").unwrap(), &tpose, 4, &InferConfig { rounds: 2, ode_steps: 2, omega: 2.0 }, 0).unwrap();
    assert_eq!(z.shape(), (4, 8));
    assert!(z.is_finite());
    assert_eq!(norm(&mock.encode_species("mock").unwrap().0), 1.0);
}
