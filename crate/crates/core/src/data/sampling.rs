use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;

use super::RawRow;
use crate::error::{Error, Result};

/// Sorts rows by timestamp (stable, so equal timestamps keep input order)
/// and cuts them into contiguous train / validation / test blocks.
pub fn chronological_split(
    mut rows: Vec<RawRow>,
    fractions: (f64, f64, f64),
) -> Result<(Vec<RawRow>, Vec<RawRow>, Vec<RawRow>)> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = rows.len();
    if n < 3 {
        return Err(Error::Ingest(format!("cannot split {n} rows three ways")));
    }
    let n_train = (n as f64 * a).round() as usize;
    let n_val = (n as f64 * b).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Ingest(format!(
            "splitting {n} rows by ({a}, {b}, {c}) leaves an empty part"
        )));
    }
    rows.sort_by_key(|r| r.ts);
    let test = rows.split_off(n_train + n_val);
    let val = rows.split_off(n_train);
    Ok((rows, val, test))
}

/// Which rows survive downsampling, given each row's final-task label.
fn keep_mask<R: Rng + ?Sized>(finals: &[bool], lambda: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!("lambda {lambda} outside (0, 1)")));
    }
    let positives = finals.iter().filter(|&&p| p).count();
    if positives == 0 {
        return Err(Error::Ingest(
            "downsampling needs at least one final-task positive".into(),
        ));
    }
    let negatives = finals.len() - positives;
    // Largest negative count with positives / (positives + kept) >= lambda.
    let bound = positives as f64 * (1.0 - lambda) / lambda;
    let keep = (bound + 1e-9).floor() as usize;
    if keep >= negatives {
        return Ok(vec![true; finals.len()]);
    }
    let mut kept_negative = vec![false; negatives];
    for i in sample_indices(rng, negatives, keep) {
        kept_negative[i] = true;
    }
    let mut next = 0;
    Ok(finals
        .iter()
        .map(|&p| {
            p || {
                next += 1;
                kept_negative[next - 1]
            }
        })
        .collect())
}

/// Removes uniformly chosen rows with `y_T = 0` until final-task positives
/// make up at least `lambda` of what is kept. Positives are never removed
/// and the surviving rows keep their order. Does nothing when the
/// proportion already reaches `lambda`.
pub fn downsample_negatives<R: Rng + ?Sized>(rows: Vec<RawRow>, lambda: f64, rng: &mut R) -> Result<Vec<RawRow>> {
    let finals: Vec<bool> = rows.iter().map(|r| r.final_label() == 1).collect();
    let mask = keep_mask(&finals, lambda, rng)?;
    Ok(rows.into_iter().zip(mask).filter(|(_, k)| *k).map(|(r, _)| r).collect())
}

/// [`downsample_negatives`] applied separately within each group, groups
/// visited in key order. Groups without a final-task positive are left
/// untouched. Output keeps input order.
pub fn downsample_negatives_by<R, K>(rows: Vec<RawRow>, lambda: f64, key: K, rng: &mut R) -> Result<Vec<RawRow>>
where
    R: Rng + ?Sized,
    K: Fn(&RawRow) -> String,
{
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        groups.entry(key(row)).or_default().push(i);
    }
    let mut keep = vec![true; rows.len()];
    for members in groups.values() {
        let finals: Vec<bool> = members.iter().map(|&i| rows[i].final_label() == 1).collect();
        if !finals.contains(&true) {
            continue;
        }
        for (&i, k) in members.iter().zip(keep_mask(&finals, lambda, rng)?) {
            keep[i] = k;
        }
    }
    Ok(rows.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect())
}

/// Splits `0..n` into batches of `batch_size` (the last may be short),
/// optionally shuffled.
pub fn batches<R: Rng + ?Sized>(n: usize, batch_size: usize, shuffle: bool, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::Contract("cannot batch an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
