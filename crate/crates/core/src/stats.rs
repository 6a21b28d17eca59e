//! Interquartile mean with stratified bootstrap intervals.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::RunRecord;

pub const DEFAULT_BOOTSTRAP: usize = 2_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Mean after dropping `floor(n / 4)` values from each end of the sorted data.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Stats("iqm of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Stats("iqm input contains NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(trimmed_mean_sorted(&v))
}

fn trimmed_mean_sorted(sorted: &[f64]) -> f64 {
    let k = sorted.len() / 4;
    let kept = &sorted[k..sorted.len() - k];
    // offset by the first kept value so constant data averages exactly
    let base = kept[0];
    base + kept.iter().map(|x| x - base).sum::<f64>() / kept.len() as f64
}

/// Linear-interpolation quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_seeds: usize,
    pub n_bootstrap: usize,
}

/// Percentile bootstrap for the IQM of per-seed means. Each replicate
/// resamples every seed's outcomes with replacement; replicate `r` uses
/// stream `r` of a seed drawn from `rng`, so results do not depend on the
/// thread count.
pub fn stratified_bootstrap_ci<R: Rng + ?Sized>(
    per_seed: &[Vec<f64>],
    n_bootstrap: usize,
    level: f64,
    rng: &mut R,
) -> Result<AggregateResult> {
    if per_seed.len() < 2 {
        return Err(Error::Stats(format!(
            "bootstrap needs at least 2 seeds, got {}",
            per_seed.len()
        )));
    }
    if per_seed.iter().any(Vec::is_empty) {
        return Err(Error::Stats("every seed needs at least one outcome".into()));
    }
    if n_bootstrap == 0 || !(0.0 < level && level < 1.0) {
        return Err(Error::Stats("n_bootstrap must be positive and level in (0, 1)".into()));
    }
    let means: Vec<f64> = per_seed
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let point = iqm(&means)?;
    let base: u64 = rng.gen();
    let mut reps: Vec<f64> = (0..n_bootstrap as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(r);
            let mut m: Vec<f64> = per_seed
                .iter()
                .map(|s| (0..s.len()).map(|_| s[rng.gen_range(0..s.len())]).sum::<f64>() / s.len() as f64)
                .collect();
            m.sort_by(f64::total_cmp);
            trimmed_mean_sorted(&m)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(AggregateResult {
        iqm: point,
        ci_low: quantile_sorted(&reps, tail),
        ci_high: quantile_sorted(&reps, 1.0 - tail),
        n_seeds: per_seed.len(),
        n_bootstrap,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKey {
    Algorithm,
    Setting,
    Mode,
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "algo" | "algorithm" => Ok(GroupKey::Algorithm),
            "setting" => Ok(GroupKey::Setting),
            "mode" => Ok(GroupKey::Mode),
            other => Err(Error::Stats(format!("unknown group key '{other}'"))),
        }
    }
}

pub fn parse_group_by(spec: &str) -> Result<Vec<GroupKey>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Placeholder for columns that are not part of the grouping.
pub const ANY: &str = "*";

/// One line of the aggregate file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: String,
    pub setting: String,
    pub mode: String,
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_seeds: usize,
}

pub const AGGREGATE_HEADER: &str = "algorithm,setting,mode,iqm,ci_low,ci_high,n_seeds";

/// `train.iqm - eval.iqm` for rows of the same algorithm and setting.
pub fn generalization_gap(train: &AggregateRow, eval: &AggregateRow) -> Result<f64> {
    if train.algorithm != eval.algorithm || train.setting != eval.setting {
        return Err(Error::Stats(format!(
            "cannot compare {}/{} with {}/{}",
            train.algorithm, train.setting, eval.algorithm, eval.setting
        )));
    }
    Ok(train.iqm - eval.iqm)
}

/// Per-seed episode outcomes (1 = success) at each seed's last logged step,
/// grouped by the requested keys.
pub fn final_outcomes(
    records: &[RunRecord],
    group_by: &[GroupKey],
) -> BTreeMap<(String, String, String), Vec<Vec<f64>>> {
    // last record per (algorithm, setting, mode, seed)
    let mut last: BTreeMap<(String, String, String, u64), &RunRecord> = BTreeMap::new();
    for r in records {
        let key = (r.algorithm.clone(), r.setting.clone(), r.mode.clone(), r.seed);
        match last.get(&key) {
            Some(prev) if prev.step > r.step => {}
            _ => {
                last.insert(key, r);
            }
        }
    }
    let pick = |k: GroupKey, v: &str| {
        if group_by.contains(&k) {
            v.to_string()
        } else {
            ANY.to_string()
        }
    };
    let mut groups: BTreeMap<(String, String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for ((algo, setting, mode, _), r) in last {
        let key = (
            pick(GroupKey::Algorithm, &algo),
            pick(GroupKey::Setting, &setting),
            pick(GroupKey::Mode, &mode),
        );
        let mut outcomes = vec![1.0; r.successes as usize];
        outcomes.resize(r.episodes as usize, 0.0);
        groups.entry(key).or_default().push(outcomes);
    }
    groups
}

pub fn aggregate_records(
    records: &[RunRecord],
    group_by: &[GroupKey],
    n_bootstrap: usize,
    seed: u64,
) -> Result<Vec<AggregateRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    final_outcomes(records, group_by)
        .into_iter()
        .map(|((algorithm, setting, mode), per_seed)| {
            let agg = stratified_bootstrap_ci(&per_seed, n_bootstrap, DEFAULT_LEVEL, &mut rng)
                .map_err(|e| Error::Stats(format!("{algorithm}/{setting}/{mode}: {e}")))?;
            Ok(AggregateRow {
                algorithm,
                setting,
                mode,
                iqm: agg.iqm,
                ci_low: agg.ci_low,
                ci_high: agg.ci_high,
                n_seeds: agg.n_seeds,
            })
        })
        .collect()
}

pub fn write_aggregate<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(AGGREGATE_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn aggregate_file(input: &Path, group_by: &[GroupKey], n_bootstrap: usize, seed: u64) -> Result<Vec<AggregateRow>> {
    aggregate_records(&crate::harness::read_metrics(input)?, group_by, n_bootstrap, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iqm_examples() {
        assert_eq!(iqm(&[0.0, 1.0, 2.0, 3.0]).unwrap(), 1.5);
        assert_eq!(iqm(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap(), 3.0);
        assert_eq!(iqm(&[0.7; 3]).unwrap(), 0.7);
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.125), 0.5);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn degenerate_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ones = vec![vec![1.0; 10]; 5];
        let a = stratified_bootstrap_ci(&ones, 500, 0.95, &mut rng).unwrap();
        assert_eq!((a.iqm, a.ci_low, a.ci_high), (1.0, 1.0, 1.0));
        assert!(stratified_bootstrap_ci(&ones[..1], 500, 0.95, &mut rng).is_err());
        assert!(stratified_bootstrap_ci(&[vec![1.0], vec![]], 500, 0.95, &mut rng).is_err());
    }

    #[test]
    fn gap_examples() {
        let row = |mode: &str, iqm: f64| AggregateRow {
            algorithm: "dqn_td".into(),
            setting: "quarters:g4:n1".into(),
            mode: mode.into(),
            iqm,
            ci_low: iqm,
            ci_high: iqm,
            n_seeds: 3,
        };
        assert_eq!(generalization_gap(&row("train", 0.5), &row("eval", 0.5)).unwrap(), 0.0);
        assert!((generalization_gap(&row("train", 1.0), &row("eval", 0.8)).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(
            generalization_gap(&row("train", 0.3), &row("eval", 0.9)).unwrap(),
            -generalization_gap(&row("eval", 0.9), &row("train", 0.3)).unwrap()
        );
        let mut other = row("eval", 0.1);
        other.algorithm = "crl".into();
        assert!(generalization_gap(&row("train", 1.0), &other).is_err());
    }

    #[test]
    fn group_keys_parse() {
        assert_eq!(
            parse_group_by("algo,setting,mode").unwrap(),
            vec![GroupKey::Algorithm, GroupKey::Setting, GroupKey::Mode]
        );
        assert!(parse_group_by("algo,color").is_err());
    }

    proptest! {
        #[test]
        fn iqm_is_monotone(v in proptest::collection::vec(-10.0f64..10.0, 1..12), i in 0usize..12, bump in 0.0f64..5.0) {
            let mut w = v.clone();
            let i = i % v.len();
            w[i] += bump;
            prop_assert!(iqm(&w).unwrap() >= iqm(&v).unwrap() - 1e-12);
        }

        #[test]
        fn iqm_is_affine_equivariant(v in proptest::collection::vec(-10.0f64..10.0, 1..12), a in 0.01f64..10.0, b in -10.0f64..10.0) {
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let lhs = iqm(&w).unwrap();
            let rhs = a * iqm(&v).unwrap() + b;
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
