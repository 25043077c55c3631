#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vlaudit_core::{Axis, DemographicRecord, EmbeddingSet, Group, LabeledEmbeddings};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut impl Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// `per_group` random images for each of the 14 intersections, in label
/// order. Images of `planted` get `strength` added along `direction`.
pub fn planted_set(
    seed: u64,
    dim: usize,
    per_group: usize,
    planted: &[(Group, usize, f64)],
) -> LabeledEmbeddings {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for g in Axis::RaceGender.groups() {
        for _ in 0..per_group {
            let mut v: Vec<f64> = (0..dim).map(|_| gauss(&mut r)).collect();
            for &(pg, direction, strength) in planted {
                if pg == g {
                    v[direction] += strength;
                }
            }
            rows.push(v);
            meta.push(DemographicRecord {
                record_id: format!("img{:05}", meta.len()),
                race: g.race.unwrap(),
                gender: g.gender.unwrap(),
                age_band: None,
            });
        }
    }
    let set = EmbeddingSet::from_rows(&rows, false)
        .unwrap()
        .l2_normalize()
        .unwrap();
    LabeledEmbeddings::new(set, meta).unwrap()
}

pub fn random_unit(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    unit((0..dim).map(|_| gauss(r)).collect())
}
