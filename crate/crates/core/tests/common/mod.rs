#![allow(dead_code)]

use fairrank::data::{Dataset, Document, Query};
use rand::Rng;

pub fn query(feats: &[Vec<f64>], rels: &[f64], groups: Option<&[u8]>) -> Query {
    Query {
        qid: "q".into(),
        docs: feats
            .iter()
            .zip(rels)
            .enumerate()
            .map(|(i, (x, &r))| Document {
                features: x.clone(),
                relevance: r,
                group: groups.map(|g| g[i]),
            })
            .collect(),
    }
}

/// Features in (-1, 1), relevances in [0, 3], alternating groups.
pub fn random_query<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Query {
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let rels: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
    let groups: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    query(&feats, &rels, Some(&groups))
}

pub fn dataset(queries: Vec<Query>) -> Dataset {
    let queries = queries
        .into_iter()
        .enumerate()
        .map(|(i, q)| Query {
            qid: (i + 1).to_string(),
            ..q
        })
        .collect();
    Dataset::new(queries).unwrap()
}

/// Componentwise mean and standard error of repeated vector estimates.
pub fn mean_and_se(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mean: Vec<f64> = (0..d).map(|k| draws.iter().map(|x| x[k]).sum::<f64>() / n).collect();
    let se = (0..d)
        .map(|k| {
            let var = draws.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}

/// Largest |mean - exact| / se over components. Components with a
/// negligible standard error must match to 1e-12.
pub fn max_z(mean: &[f64], se: &[f64], exact: &[f64]) -> f64 {
    mean.iter()
        .zip(se)
        .zip(exact)
        .map(|((m, s), e)| {
            if *s < 1e-12 {
                if (m - e).abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (m - e).abs() / s
            }
        })
        .fold(0.0, f64::max)
}
