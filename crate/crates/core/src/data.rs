//! Synthetic robust least-squares data, conditioning control, the UCI
//! ionosphere format and row sharding.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlsConfig {
    pub agents: usize,
    pub rows: usize,
    pub features: usize,
    pub threshold: f64,
    pub noise_std: f64,
    pub a_range: (f64, f64),
    pub x_range: (f64, f64),
    pub seed: u64,
}

impl Default for RlsConfig {
    fn default() -> Self {
        Self {
            agents: 10,
            rows: 20,
            features: 10,
            threshold: 1.0,
            noise_std: 1.0,
            a_range: (0.0, 1.0),
            x_range: (0.0, 20.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlsData {
    pub blocks: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub x_true: DVector<f64>,
    /// Condition number of the stacked coefficient matrix.
    pub condition: f64,
}

/// Draws `A^i`, then `x_true`, then the noise, from one seeded stream.
/// With `kappa` set, the stacked `A` is rescaled to that condition number
/// before `Y^i = A^i x_true + e^i` is formed.
pub fn synth_rls_conditioned(cfg: &RlsConfig, kappa: Option<f64>) -> Result<RlsData> {
    if cfg.agents == 0 || cfg.rows == 0 || cfg.features == 0 {
        return Err(Error::invalid("agents, rows and features must be positive"));
    }
    if !(cfg.noise_std >= 0.0) || cfg.a_range.0 > cfg.a_range.1 || cfg.x_range.0 > cfg.x_range.1 {
        return Err(Error::invalid(
            "noise std must be non-negative and ranges ordered",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (alo, ahi) = cfg.a_range;
    let mut mats: Vec<DMatrix<f64>> = (0..cfg.agents)
        .map(|_| {
            DMatrix::from_fn(cfg.rows, cfg.features, |_, _| {
                alo + (ahi - alo) * rng.random::<f64>()
            })
        })
        .collect();
    if let Some(k) = kappa {
        mats = set_condition_number(&mats, k)?;
    }
    let (xlo, xhi) = cfg.x_range;
    let x_true = DVector::from_fn(cfg.features, |_, _| xlo + (xhi - xlo) * rng.random::<f64>());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let blocks = mats
        .into_iter()
        .map(|a| {
            let noise = DVector::from_fn(cfg.rows, |_, _| cfg.noise_std * normal.sample(&mut rng));
            let y = &a * &x_true + noise;
            (a, y)
        })
        .collect::<Vec<_>>();
    let condition = condition_number(&blocks.iter().map(|b| b.0.clone()).collect::<Vec<_>>())?;
    Ok(RlsData {
        blocks,
        x_true,
        condition,
    })
}

pub fn synth_rls(cfg: &RlsConfig) -> Result<RlsData> {
    synth_rls_conditioned(cfg, None)
}

fn stack_rows(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let p = blocks
        .first()
        .ok_or_else(|| Error::invalid("no blocks"))?
        .ncols();
    if blocks.iter().any(|b| b.ncols() != p) {
        return Err(Error::dim("blocks have different column counts"));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut a = DMatrix::zeros(rows, p);
    let mut at = 0;
    for b in blocks {
        a.view_mut((at, 0), b.shape()).copy_from(b);
        at += b.nrows();
    }
    Ok(a)
}

fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    a.clone().svd(false, false).singular_values
}

/// `sigma_max / sigma_min` of the row-stacked blocks.
pub fn condition_number(blocks: &[DMatrix<f64>]) -> Result<f64> {
    let a = stack_rows(blocks)?;
    if a.nrows() < a.ncols() {
        return Err(Error::invalid("stacked matrix has fewer rows than columns"));
    }
    let s = singular_values(&a);
    let (hi, lo) = (s.max(), s.min());
    if !(lo > hi * f64::EPSILON * a.nrows().max(a.ncols()) as f64) {
        return Err(Error::invalid("stacked matrix is rank deficient"));
    }
    Ok(hi / lo)
}

/// Rescales the singular values of the stacked blocks geometrically so the
/// condition number becomes `kappa`, keeping `sigma_max` and the singular
/// vectors. Blocks are returned in their original row partition.
pub fn set_condition_number(blocks: &[DMatrix<f64>], kappa: f64) -> Result<Vec<DMatrix<f64>>> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!(
            "target condition number must be at least 1, got {kappa}"
        )));
    }
    let current = condition_number(blocks)?;
    if current == kappa {
        return Ok(blocks.to_vec());
    }
    if current == 1.0 {
        return Err(Error::invalid(
            "all singular values are equal; no spread to rescale",
        ));
    }
    let a = stack_rows(blocks)?;
    let svd = a.svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let ratio = kappa.ln() / current.ln();
    let scaled = s.map(|v| (smax.ln() - (smax.ln() - v.ln()) * ratio).exp());
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let rebuilt = u * DMatrix::from_diagonal(&scaled) * vt;
    let mut out = Vec::with_capacity(blocks.len());
    let mut at = 0;
    for b in blocks {
        out.push(rebuilt.view((at, 0), b.shape()).into_owned());
        at += b.nrows();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// ionosphere

pub const IONOSPHERE_ROWS: usize = 351;
pub const IONOSPHERE_FEATURES: usize = 34;
pub const IONOSPHERE_KEPT: usize = 350;

#[derive(Clone, Debug, PartialEq)]
pub struct Ionosphere {
    pub phi: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub good: usize,
    pub bad: usize,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses the UCI layout: 351 rows of 34 numeric features and a `g`/`b`
/// class label. Keeps the first 350 rows with `g -> 1`, `b -> 0`.
pub fn parse_ionosphere(reader: impl Read) -> Result<Ionosphere> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(IONOSPHERE_ROWS);
    let mut last_line = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(last_line + 1, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(last_line + 1, |p| p.line());
        last_line = line;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != IONOSPHERE_FEATURES + 1 {
            return Err(parse_err(
                line,
                format!(
                    "expected {} fields, found {}",
                    IONOSPHERE_FEATURES + 1,
                    rec.len()
                ),
            ));
        }
        let mut feats = Vec::with_capacity(IONOSPHERE_FEATURES);
        for (c, field) in rec.iter().take(IONOSPHERE_FEATURES).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(line, format!("column {}: `{field}` is not numeric", c + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column {}: non-finite value", c + 1),
                ));
            }
            feats.push(v);
        }
        let label = match rec[IONOSPHERE_FEATURES].trim() {
            "g" => 1.0,
            "b" => 0.0,
            other => return Err(parse_err(line, format!("unknown class label `{other}`"))),
        };
        rows.push((feats, label));
        if rows.len() > IONOSPHERE_ROWS {
            return Err(parse_err(line, format!("more than {IONOSPHERE_ROWS} rows")));
        }
    }
    if rows.len() != IONOSPHERE_ROWS {
        return Err(parse_err(
            last_line + 1,
            format!(
                "file ended after {} rows, expected {IONOSPHERE_ROWS}",
                rows.len()
            ),
        ));
    }
    rows.truncate(IONOSPHERE_KEPT);
    let phi = DMatrix::from_fn(IONOSPHERE_KEPT, IONOSPHERE_FEATURES, |i, j| rows[i].0[j]);
    let labels = DVector::from_fn(IONOSPHERE_KEPT, |i, _| rows[i].1);
    let good = labels.iter().filter(|y| **y == 1.0).count();
    Ok(Ionosphere {
        phi,
        labels,
        good,
        bad: IONOSPHERE_KEPT - good,
    })
}

pub fn load_ionosphere(path: &Path) -> Result<Ionosphere> {
    parse_ionosphere(std::fs::File::open(path)?)
}

/// Deterministic stand-in in the UCI layout: column 1 binary, column 2 all
/// zero, the rest in `[-1, 1]`, labels drawn from a logistic model.
pub fn synthetic_ionosphere_csv(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..IONOSPHERE_FEATURES)
        .map(|_| 3.0 * (rng.random::<f64>() - 0.5))
        .collect();
    let mut out = String::new();
    for _ in 0..IONOSPHERE_ROWS {
        let mut feats = vec![0.0; IONOSPHERE_FEATURES];
        feats[0] = if rng.random::<f64>() < 0.9 { 1.0 } else { 0.0 };
        for f in feats.iter_mut().skip(2) {
            *f = 2.0 * rng.random::<f64>() - 1.0;
        }
        let score: f64 = 0.8 + feats.iter().zip(&weights).map(|(f, w)| f * w).sum::<f64>();
        let good = rng.random::<f64>() < crate::reformulations::sigmoid(score);
        for f in &feats {
            if *f == 0.0 || *f == 1.0 {
                out.push_str(&format!("{},", *f as i64));
            } else {
                out.push_str(&format!("{f:.5},"));
            }
        }
        out.push_str(if good { "g\n" } else { "b\n" });
    }
    out
}

/// Splits rows into `n` contiguous equal shards in order.
pub fn partition_data(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    n: usize,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    if n == 0 {
        return Err(Error::invalid("shard count must be positive"));
    }
    if phi.nrows() != y.len() {
        return Err(Error::dim("row counts of data and labels differ"));
    }
    let rows = phi.nrows();
    if !rows.is_multiple_of(n) {
        return Err(Error::invalid(format!(
            "{rows} rows cannot be split evenly into {n} shards; truncate to {} rows first",
            rows - rows % n
        )));
    }
    let size = rows / n;
    Ok((0..n)
        .map(|s| {
            (
                phi.rows(s * size, size).into_owned(),
                y.rows(s * size, size).into_owned(),
            )
        })
        .collect())
}

/// Applies one seeded permutation to the rows of `phi` and `y`.
pub fn shuffle_rows(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    seed: u64,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut order: Vec<usize> = (0..phi.nrows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let p = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| phi[(order[i], j)]);
    let l = DVector::from_fn(y.len(), |i, _| y[order[i]]);
    (p, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rls_dimensions_and_ranges() {
        let d = synth_rls(&RlsConfig {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(d.blocks.len(), 10);
        for (a, y) in &d.blocks {
            assert_eq!(a.shape(), (20, 10));
            assert_eq!(y.len(), 20);
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(d.x_true.iter().all(|v| (0.0..=20.0).contains(v)));
    }

    #[test]
    fn noiseless_targets_are_exact() {
        let d = synth_rls(&RlsConfig {
            seed: 5,
            noise_std: 0.0,
            ..Default::default()
        })
        .unwrap();
        for (a, y) in &d.blocks {
            assert_eq!(&(a * &d.x_true), y);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_rls(&RlsConfig {
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let b = synth_rls(&RlsConfig {
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditioning_hits_targets() {
        let d = synth_rls(&RlsConfig {
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        let mats: Vec<_> = d.blocks.iter().map(|b| b.0.clone()).collect();
        for target in [56.92, 6.56] {
            let out = set_condition_number(&mats, target).unwrap();
            let got = condition_number(&out).unwrap();
            assert!((got - target).abs() <= 1e-6 * target, "{got} vs {target}");
            assert_eq!(out[3].shape(), (20, 10));
        }
        let same = set_condition_number(&mats, d.condition).unwrap();
        for (a, b) in same.iter().zip(&mats) {
            assert!((a - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn rank_deficient_stack_is_rejected() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            set_condition_number(&[a], 10.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn synthetic_ionosphere_parses() {
        let text = synthetic_ionosphere_csv(1);
        let ion = parse_ionosphere(text.as_bytes()).unwrap();
        assert_eq!(ion.phi.shape(), (350, 34));
        assert!(ion.labels.iter().all(|y| *y == 0.0 || *y == 1.0));
        assert_eq!(ion.good + ion.bad, 350);
        assert!(ion.phi.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn truncated_file_reports_line() {
        let text: String = synthetic_ionosphere_csv(1)
            .lines()
            .take(200)
            .map(|l| format!("{l}\n"))
            .collect();
        match parse_ionosphere(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 201),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_label_and_bad_number_report_line() {
        let mut lines: Vec<String> = synthetic_ionosphere_csv(2)
            .lines()
            .map(String::from)
            .collect();
        lines[4] = lines[4].replace(",g", ",x").replace(",b", ",x");
        let text = lines.join("\n");
        assert!(matches!(
            parse_ionosphere(text.as_bytes()),
            Err(Error::Parse { line: 5, .. })
        ));
        let mut lines: Vec<String> = synthetic_ionosphere_csv(2)
            .lines()
            .map(String::from)
            .collect();
        lines[9] = lines[9]
            .replacen("1,0,", "one,0,", 1)
            .replacen("0,0,", "zero,0,", 1);
        let text = lines.join("\n");
        assert!(matches!(
            parse_ionosphere(text.as_bytes()),
            Err(Error::Parse { line: 10, .. })
        ));
    }

    #[test]
    fn partition_examples() {
        let phi = DMatrix::from_fn(350, 2, |i, j| (i * 2 + j) as f64);
        let y = DVector::from_fn(350, |i, _| (i % 2) as f64);
        let s = partition_data(&phi, &y, 10).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|(a, b)| a.nrows() == 35 && b.len() == 35));
        assert_eq!(s[1].0[(0, 0)], 70.0);
        assert_eq!(partition_data(&phi, &y, 7).unwrap()[0].0.nrows(), 50);
        let phi = DMatrix::zeros(351, 2);
        let y = DVector::zeros(351);
        assert!(matches!(
            partition_data(&phi, &y, 10),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let phi = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let (a, b) = shuffle_rows(&phi, &y, 4);
        assert_eq!(a.column(0), b.column(0));
        let mut seen: Vec<f64> = b.iter().copied().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(shuffle_rows(&phi, &y, 4), (a, b));
    }
}
