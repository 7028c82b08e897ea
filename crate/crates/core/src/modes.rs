//! Operating-mode discovery: a codebook of recurring window shapes, per-block
//! word counts, and k-means over the resulting proportions.
//!
//! The codebook is built by a single leader pass, so it depends on window
//! order; the same input order always yields the same exemplars.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{distance, DistanceSpec};
use crate::error::{Error, Result};
use crate::time::{duration_nanos, Timestamp};
use crate::windowing::{TimeRange, Window};

#[derive(Debug, Clone)]
pub struct PatternCodebook {
    pub exemplars: Vec<Window>,
    pub assignment_radius: f64,
    pub measure: DistanceSpec,
}

impl PatternCodebook {
    /// Index of the nearest exemplar (lowest index on ties), or `None` when
    /// the nearest lies beyond the radius.
    pub fn assign(&self, w: &Window) -> Result<Option<usize>> {
        let mut best: Option<(f64, usize)> = None;
        for (i, ex) in self.exemplars.iter().enumerate() {
            let d = distance(w, ex, &self.measure)?;
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, i));
            }
        }
        Ok(best.filter(|&(d, _)| d <= self.assignment_radius).map(|(_, i)| i))
    }
}

/// Leader clustering: a window within `radius` of an existing exemplar is
/// absorbed, otherwise it becomes a new exemplar.
pub fn build_codebook(windows: &[Window], measure: &DistanceSpec, radius: f64) -> Result<PatternCodebook> {
    measure.validate()?;
    if windows.is_empty() {
        return Err(Error::invalid("cannot build a codebook from no windows"));
    }
    if radius.is_nan() {
        return Err(Error::invalid("codebook radius is NaN"));
    }
    let mut exemplars: Vec<Window> = Vec::new();
    for w in windows {
        let mut absorbed = false;
        for ex in &exemplars {
            if distance(w, ex, measure)? <= radius {
                absorbed = true;
                break;
            }
        }
        if !absorbed {
            exemplars.push(w.clone());
        }
    }
    Ok(PatternCodebook {
        exemplars,
        assignment_radius: radius,
        measure: measure.clone(),
    })
}

/// Word counts for one time block. `interval` is half-open: `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBlock {
    pub interval: TimeRange,
    pub counts: Vec<usize>,
    /// Windows farther than the radius from every exemplar.
    pub overflow: usize,
}

impl FrequencyBlock {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }

    /// Counts plus overflow, divided by their total (all zeros when empty).
    pub fn proportions(&self) -> Vec<f64> {
        let total = self.total();
        let mut v: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        v.push(self.overflow as f64);
        if total > 0 {
            v.iter_mut().for_each(|x| *x /= total as f64);
        }
        v
    }
}

/// Assigns each window to its nearest exemplar and counts per block of width
/// `block`, starting at the first window's origin. A window falls in the block
/// containing its start timestamp.
pub fn word_frequencies(
    windows: &[Window],
    codebook: &PatternCodebook,
    block: Duration,
) -> Result<Vec<FrequencyBlock>> {
    if codebook.exemplars.is_empty() {
        return Err(Error::invalid("codebook is empty"));
    }
    let Some(first) = windows.first() else {
        return Ok(Vec::new());
    };
    let width = duration_nanos(block);
    let span = windows
        .iter()
        .map(|w| w.end_ts().nanos_since(w.start_ts()))
        .max()
        .unwrap_or(0);
    if width <= 0 || width < span {
        return Err(Error::invalid(format!(
            "block of {}s is shorter than a window ({}s)",
            block.as_secs_f64(),
            span as f64 / 1e9
        )));
    }
    let origin = windows.iter().map(Window::start_ts).min().unwrap_or(first.start_ts());
    let last = windows.iter().map(Window::start_ts).max().unwrap_or(origin);
    let n_blocks = (last.nanos_since(origin) / width + 1) as usize;

    let words: Vec<Option<usize>> = windows.par_iter().map(|w| codebook.assign(w)).collect::<Result<_>>()?;

    let mut blocks: Vec<FrequencyBlock> = (0..n_blocks)
        .map(|b| {
            let start = Timestamp::from_nanos(origin.nanos() + b as i64 * width);
            FrequencyBlock {
                interval: TimeRange::new(start, Timestamp::from_nanos(start.nanos() + width)),
                counts: vec![0; codebook.exemplars.len()],
                overflow: 0,
            }
        })
        .collect();
    for (w, word) in windows.iter().zip(words) {
        let b = &mut blocks[(w.start_ts().nanos_since(origin) / width) as usize];
        match word {
            Some(i) => b.counts[i] += 1,
            None => b.overflow += 1,
        }
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

pub const KMEANS_MAX_ITER: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Lloyd's algorithm. The first center is a seeded random point, the rest are
/// chosen farthest-first. A cluster that empties is reseeded at the point
/// farthest from its current center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} points", points.len())));
    }
    let dim = points[0].len();
    if points
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("points must be finite vectors of equal length"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let far = argmax(points.iter().map(|p| nearest(p, &centers).1));
        centers.push(points[far].clone());
    }

    let mut assignments: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITER {
        let (next, dists): (Vec<usize>, Vec<f64>) = points.iter().map(|p| nearest(p, &centers)).unzip();
        let objective: f64 = dists.iter().sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(objective <= prev + 1e-9 * prev.max(1.0), "k-means objective rose");
        }
        trace.push(objective);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            sizes[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if sizes[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / sizes[j] as f64).collect();
            }
        }
        for j in 0..k {
            if sizes[j] == 0 {
                let far = argmax(points.iter().zip(&assignments).map(|(p, &c)| sq_dist(p, &centers[c])));
                centers[j] = points[far].clone();
            }
        }
    }
    Ok(KMeans {
        assignments,
        centers,
        objective_trace: trace,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBlock {
    pub interval: TimeRange,
    pub counts: Vec<usize>,
    pub overflow: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAssignment {
    pub blocks: Vec<ModeBlock>,
    pub cluster_count: usize,
    pub objective_trace: Vec<f64>,
}

/// k-means on per-block word proportions (overflow included as a word).
pub fn cluster_modes(frequencies: &[FrequencyBlock], k: usize, seed: u64) -> Result<ModeAssignment> {
    if k > frequencies.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} blocks",
            frequencies.len()
        )));
    }
    let points: Vec<Vec<f64>> = frequencies.iter().map(FrequencyBlock::proportions).collect();
    let km = kmeans(&points, k, seed)?;
    Ok(ModeAssignment {
        blocks: frequencies
            .iter()
            .zip(&km.assignments)
            .map(|(f, &cluster)| ModeBlock {
                interval: f.interval,
                counts: f.counts.clone(),
                overflow: f.overflow,
                cluster,
            })
            .collect(),
        cluster_count: k,
        objective_trace: km.objective_trace,
    })
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Two trivial
/// partitions that agree score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("labelings differ in length"));
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / choose2(n).max(1.0);
    let max = (rows + cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::Measure;
    use crate::time::secs;

    fn euclid() -> DistanceSpec {
        DistanceSpec::new(Measure::EuclideanSlide)
    }

    fn win(values: &[f64], t: i64) -> Window {
        Window::univariate(values).unwrap().with_key(0, t).unwrap()
    }

    #[test]
    fn identical_windows_one_exemplar() {
        let ws: Vec<Window> = (0..5).map(|i| win(&[1.0, 2.0, 3.0], i * 3)).collect();
        assert_eq!(build_codebook(&ws, &euclid(), 0.1).unwrap().exemplars.len(), 1);
    }

    #[test]
    fn radius_zero_keeps_distinct_windows() {
        let ws: Vec<Window> = (0..5).map(|i| win(&[i as f64, 0.0], i * 2)).collect();
        let mut with_dup = ws.clone();
        with_dup.push(win(&[2.0, 0.0], 20));
        assert_eq!(build_codebook(&with_dup, &euclid(), 0.0).unwrap().exemplars.len(), 5);
        assert!(build_codebook(&[], &euclid(), 0.0).is_err());
    }

    fn two_patterns() -> Vec<Window> {
        let a = [0.0, 1.0, 0.0, -1.0];
        let b = [2.0, 2.0, -2.0, -2.0];
        (0..12)
            .map(|i| {
                let base = if (i / 3) % 2 == 0 { a } else { b };
                let jitter = 0.01 * (i % 3) as f64;
                win(&base.map(|v| v + jitter), i * 4)
            })
            .collect()
    }

    #[test]
    fn alternating_patterns_two_exemplars() {
        let ws = two_patterns();
        let d = euclid();
        let mut intra = 0.0f64;
        let mut inter = f64::INFINITY;
        for x in &ws {
            for y in &ws {
                let v = distance(x, y, &d).unwrap();
                if x.trace(0)[0].round() == y.trace(0)[0].round() {
                    intra = intra.max(v);
                } else {
                    inter = inter.min(v);
                }
            }
        }
        let radius = (intra + inter) / 2.0;
        assert!(intra < radius && radius < inter);
        let cb = build_codebook(&ws, &d, radius).unwrap();
        assert_eq!(cb.exemplars.len(), 2);
        for (i, x) in cb.exemplars.iter().enumerate() {
            for y in &cb.exemplars[i + 1..] {
                assert!(distance(x, y, &d).unwrap() > radius);
            }
        }
    }

    #[test]
    fn frequencies_conserve_windows() {
        let ws = two_patterns();
        let cb = build_codebook(&ws[..3], &euclid(), 0.5).unwrap();
        let blocks = word_frequencies(&ws, &cb, secs(12.0)).unwrap();
        assert_eq!(blocks.len(), 4);
        let total: usize = blocks.iter().map(FrequencyBlock::total).sum();
        assert_eq!(total, ws.len());
        // the second pattern never appears in the codebook
        assert_eq!(blocks[1].overflow, 3);
        assert_eq!(blocks[0].counts, vec![3]);
        assert!(word_frequencies(&ws, &cb, secs(2.0)).is_err());
        let empty = PatternCodebook {
            exemplars: vec![],
            assignment_radius: 1.0,
            measure: euclid(),
        };
        assert!(word_frequencies(&ws, &empty, secs(12.0)).is_err());
    }

    #[test]
    fn empty_block_is_zero_vector() {
        let ws = vec![win(&[1.0, 1.0], 0), win(&[1.0, 1.0], 30)];
        let cb = build_codebook(&ws, &euclid(), 0.0).unwrap();
        let blocks = word_frequencies(&ws, &cb, secs(10.0)).unwrap();
        assert_eq!(blocks.len(), 4);
        assert_eq!(blocks[1].counts, vec![0]);
        assert_eq!(blocks[1].proportions(), vec![0.0, 0.0]);
        assert_eq!(blocks[3].counts, vec![1]);
    }

    fn block(counts: &[usize]) -> FrequencyBlock {
        FrequencyBlock {
            interval: TimeRange::new(Timestamp(0), Timestamp(1)),
            counts: counts.to_vec(),
            overflow: 0,
        }
    }

    #[test]
    fn kmeans_cases() {
        let blocks: Vec<FrequencyBlock> = (0..10)
            .map(|i| if i % 2 == 0 { block(&[9, 1]) } else { block(&[1, 9]) })
            .collect();
        let m = cluster_modes(&blocks, 1, 3).unwrap();
        assert!(m.blocks.iter().all(|b| b.cluster == 0));

        let m = cluster_modes(&blocks, 2, 3).unwrap();
        let planted: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let got: Vec<usize> = m.blocks.iter().map(|b| b.cluster).collect();
        assert_eq!(adjusted_rand_index(&planted, &got).unwrap(), 1.0);
        assert!(m.objective_trace.windows(2).all(|p| p[1] <= p[0]));

        let same = vec![block(&[2, 2]); 4];
        let m = cluster_modes(&same, 2, 0).unwrap();
        assert_eq!(m.blocks.len(), 4);
        assert!(cluster_modes(&same, 5, 0).is_err());
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![((i * 37) % 11) as f64, ((i * 13) % 7) as f64])
            .collect();
        let a = kmeans(&pts, 3, 42).unwrap();
        assert_eq!(a, kmeans(&pts, 3, 42).unwrap());
        assert!(a.objective_trace.windows(2).all(|p| p[1] <= p[0] + 1e-12));
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        // 6 items: contingency {0:[2,1,0], 1:[0,1,2]} gives ARI = (2 − 1.2) / (4.5 − 1.2)
        let v = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((v - 0.8 / 3.3).abs() < 1e-12, "{v}");
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }
}
