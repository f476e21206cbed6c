//! Deterministic stand-in for the reasoning endpoint. Each
//! (seed, molecule, dimension) has a latent probability derived from a
//! SHA-256 hash; each sample is a Bernoulli draw keyed additionally by the
//! sample index. Output is identical on every platform.

use sha2::{Digest, Sha256};

use crate::domain::Dimension;

fn hash_unit(parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    // 53 high bits -> [0, 1)
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// Latent success probability of `dimension` for `molecule_id`.
pub fn latent_probability(seed: u64, molecule_id: &str, dimension: Dimension) -> f64 {
    hash_unit(&[b"latent", &seed.to_le_bytes(), molecule_id.as_bytes(), dimension.name().as_bytes()])
}

pub fn mock_judgment(seed: u64, molecule_id: &str, dimension: Dimension, sample_idx: usize) -> u8 {
    let p = latent_probability(seed, molecule_id, dimension);
    let u = hash_unit(&[
        b"draw",
        &seed.to_le_bytes(),
        molecule_id.as_bytes(),
        dimension.name().as_bytes(),
        &(sample_idx as u64).to_le_bytes(),
    ]);
    u8::from(u < p)
}

/// Renders one mock response in the same wire format an endpoint returns.
pub fn mock_response(seed: u64, molecule_id: &str, sample_idx: usize) -> String {
    let fields: Vec<String> = Dimension::ALL
        .iter()
        .map(|&d| format!("\"{}\":{}", d.name(), mock_judgment(seed, molecule_id, d, sample_idx)))
        .collect();
    format!("Mock assessment for {molecule_id}.\n{{{}}}", fields.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        for i in 0..50 {
            assert_eq!(
                mock_judgment(7, "m1", Dimension::Binding, i),
                mock_judgment(7, "m1", Dimension::Binding, i)
            );
        }
    }

    #[test]
    fn empirical_mean_tracks_latent_probability() {
        for (mol, dim) in [("m1", Dimension::Binding), ("m2", Dimension::IonInteraction), ("xyz", Dimension::PredictedEffect)] {
            let p = latent_probability(7, mol, dim);
            let hits: u32 = (0..10_000).map(|i| u32::from(mock_judgment(7, mol, dim, i))).sum();
            let mean = f64::from(hits) / 10_000.0;
            assert!((mean - p).abs() < 0.02, "{mol}/{dim}: {mean} vs {p}");
        }
    }

    #[test]
    fn seeds_differ() {
        let a: Vec<u8> = (0..100).map(|i| mock_judgment(1, "m1", Dimension::Binding, i)).collect();
        let b: Vec<u8> = (0..100).map(|i| mock_judgment(2, "m1", Dimension::Binding, i)).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn response_parses() {
        let raw = mock_response(3, "m9", 4);
        let s = super::super::parse_response(&raw).unwrap();
        for d in Dimension::ALL {
            assert_eq!(s.get(d), f64::from(mock_judgment(3, "m9", d, 4)));
        }
    }
}
