//! Parcel functional connectivity and the reliability, identifiability,
//! validity and change metrics computed from it.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RunLabels, ScanMatrix};
use crate::error::{Error, Result};
use crate::linalg::pearson;

/// Correlations are clipped to this magnitude before the Fisher transform.
pub const R_CLIP: f64 = 1.0 - 1e-12;
/// Fewest unflagged volumes for which FC is defined.
pub const MIN_FC_VOLUMES: usize = 3;

/// Assignment of locations to parcels `1..=P`, with optional network names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parcellation {
    assignment: Vec<usize>,
    network_of: BTreeMap<usize, String>,
    n_parcels: usize,
}

impl Parcellation {
    pub fn new(assignment: Vec<usize>, network_of: BTreeMap<usize, String>) -> Result<Self> {
        let n_parcels = assignment.iter().copied().max().unwrap_or(0);
        if n_parcels < 2 {
            return Err(Error::invalid("a parcellation needs at least 2 parcels"));
        }
        if assignment.contains(&0) {
            return Err(Error::invalid("parcel ids start at 1"));
        }
        let mut counts = vec![0usize; n_parcels];
        for &p in &assignment {
            counts[p - 1] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("parcel {} has no locations", empty + 1)));
        }
        if let Some(bad) = network_of.keys().find(|&&k| k == 0 || k > n_parcels) {
            return Err(Error::invalid(format!("network label for unknown parcel {bad}")));
        }
        Ok(Self {
            assignment,
            network_of,
            n_parcels,
        })
    }

    /// Contiguous equal-size parcels over `n_locations`.
    pub fn contiguous(n_locations: usize, n_parcels: usize) -> Result<Self> {
        if n_parcels == 0 || n_locations < n_parcels {
            return Err(Error::invalid(format!("cannot split {n_locations} locations into {n_parcels} parcels")));
        }
        Self::new((0..n_locations).map(|j| j * n_parcels / n_locations + 1).collect(), BTreeMap::new())
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n_parcels(&self) -> usize {
        self.n_parcels
    }

    pub fn n_locations(&self) -> usize {
        self.assignment.len()
    }

    pub fn network(&self, parcel: usize) -> Option<&str> {
        self.network_of.get(&parcel).map(String::as_str)
    }

    /// Upper-triangle mask selecting pairs whose parcels satisfy `keep` (1-based ids).
    pub fn pair_mask(&self, keep: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let p = self.n_parcels;
        let mut mask = Vec::with_capacity(p * (p - 1) / 2);
        for i in 0..p {
            for j in i + 1..p {
                mask.push(keep(i + 1, j + 1));
            }
        }
        mask
    }

    /// Mean over each parcel's locations for the given rows.
    pub fn parcel_means(&self, values: &DMatrix<f64>, rows: &[usize]) -> Result<DMatrix<f64>> {
        if values.ncols() != self.assignment.len() {
            return Err(Error::shape(format!(
                "parcellation covers {} locations but the scan has {}",
                self.assignment.len(),
                values.ncols()
            )));
        }
        let mut counts = vec![0.0; self.n_parcels];
        for &p in &self.assignment {
            counts[p - 1] += 1.0;
        }
        let mut out = DMatrix::zeros(rows.len(), self.n_parcels);
        for (r, &t) in rows.iter().enumerate() {
            for (j, &p) in self.assignment.iter().enumerate() {
                out[(r, p - 1)] += values[(t, j)];
            }
            for p in 0..self.n_parcels {
                out[(r, p)] /= counts[p];
            }
        }
        Ok(out)
    }
}

/// Fisher-z connectivity. The diagonal is 0 and carries no meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct FcMatrix {
    pub z: DMatrix<f64>,
    pub labels: RunLabels,
    pub n_volumes_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcSidecar {
    pub labels: RunLabels,
    pub n_volumes_used: usize,
    pub n_parcels: usize,
}

impl FcMatrix {
    pub fn n_parcels(&self) -> usize {
        self.z.nrows()
    }

    /// Strict upper triangle in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let p = self.n_parcels();
        let mut out = Vec::with_capacity(p * (p - 1) / 2);
        for i in 0..p {
            for j in i + 1..p {
                out.push(self.z[(i, j)]);
            }
        }
        out
    }

    pub fn sidecar(&self) -> FcSidecar {
        FcSidecar {
            labels: self.labels.clone(),
            n_volumes_used: self.n_volumes_used,
            n_parcels: self.n_parcels(),
        }
    }
}

pub fn fisher_z(r: f64) -> f64 {
    r.clamp(-R_CLIP, R_CLIP).atanh()
}

/// Parcel FC over unflagged volumes.
pub fn fc(scan: &ScanMatrix, parc: &Parcellation, flags: &[bool]) -> Result<FcMatrix> {
    let mut m = fc_from_values(scan.values(), parc, flags)?;
    m.labels = scan.labels.clone();
    Ok(m)
}

pub fn fc_from_values(values: &DMatrix<f64>, parc: &Parcellation, flags: &[bool]) -> Result<FcMatrix> {
    if flags.len() != values.nrows() {
        return Err(Error::shape(format!(
            "flag vector has {} entries but the scan has {} volumes",
            flags.len(),
            values.nrows()
        )));
    }
    let kept: Vec<usize> = (0..flags.len()).filter(|&t| !flags[t]).collect();
    if kept.len() < MIN_FC_VOLUMES {
        return Err(Error::invalid(format!(
            "FC needs at least {MIN_FC_VOLUMES} unflagged volumes, got {}",
            kept.len()
        )));
    }
    let means = parc.parcel_means(values, &kept)?;
    let p = parc.n_parcels();
    let columns: Vec<Vec<f64>> = means.column_iter().map(|c| c.iter().copied().collect()).collect();
    let mut z = DMatrix::zeros(p, p);
    let mut constant = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            match pearson(&columns[i], &columns[j]) {
                Some(r) => {
                    let v = fisher_z(r);
                    z[(i, j)] = v;
                    z[(j, i)] = v;
                }
                None => {
                    for k in [i, j] {
                        if !constant.contains(&k) && pearson(&columns[k], &columns[k]).is_none() {
                            constant.push(k);
                        }
                    }
                }
            }
        }
    }
    if !constant.is_empty() {
        constant.sort_unstable();
        let ids: Vec<String> = constant.iter().map(|k| (k + 1).to_string()).collect();
        log::warn!("constant parcel timeseries set to zero connectivity: parcels {}", ids.join(", "));
    }
    Ok(FcMatrix {
        z,
        labels: RunLabels::default(),
        n_volumes_used: kept.len(),
    })
}

/// ICC(3,1) of an S × R table (subjects by runs).
pub fn icc31(z: &DMatrix<f64>) -> Result<f64> {
    let (s, r) = z.shape();
    if s < 2 || r < 2 {
        return Err(Error::invalid(format!("ICC needs at least 2 subjects and 2 runs, got {s} x {r}")));
    }
    let (sf, rf) = (s as f64, r as f64);
    let subject_means: Vec<f64> = z.row_iter().map(|row| row.sum() / rf).collect();
    let grand = subject_means.iter().sum::<f64>() / sf;
    let msb = rf / (sf - 1.0) * subject_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ssw = 0.0;
    for (row, m) in z.row_iter().zip(&subject_means) {
        ssw += row.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let msw = ssw / (sf * (rf - 1.0));
    let denom = msb + (rf - 1.0) * msw;
    if !(denom > 0.0) {
        return Err(Error::Degenerate("degenerate variance: ICC denominator is zero".into()));
    }
    Ok((msb - msw) / denom)
}

/// ICC(3,1) for every connection. `runs[s][r]` is subject s, run r.
/// Connections with a zero ICC denominator are `None`.
pub fn icc_per_pair(runs: &[Vec<FcMatrix>]) -> Result<Vec<Option<f64>>> {
    let s = runs.len();
    let r = runs.first().map_or(0, Vec::len);
    if s < 2 || r < 2 {
        return Err(Error::invalid(format!("ICC needs at least 2 subjects and 2 runs, got {s} x {r}")));
    }
    let vectors: Vec<Vec<Vec<f64>>> = runs
        .iter()
        .map(|subject| {
            if subject.len() != r {
                return Err(Error::shape("every subject needs the same number of runs"));
            }
            Ok(subject.iter().map(FcMatrix::upper_triangle).collect())
        })
        .collect::<Result<_>>()?;
    let n_pairs = vectors[0][0].len();
    if vectors.iter().flatten().any(|v| v.len() != n_pairs) {
        return Err(Error::shape("FC matrices differ in parcel count"));
    }
    Ok((0..n_pairs)
        .into_par_iter()
        .map(|p| icc31(&DMatrix::from_fn(s, r, |i, j| vectors[i][j][p])).ok())
        .collect())
}

fn masked(v: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    match mask {
        None => v.to_vec(),
        Some(m) => v.iter().zip(m).filter(|(_, &k)| k).map(|(x, _)| *x).collect(),
    }
}

/// Share of queries whose most similar database scan belongs to the same
/// subject. A tie for the top similarity counts as a miss.
pub fn fingerprint(database: &[FcMatrix], query: &[FcMatrix], mask: Option<&[bool]>) -> Result<f64> {
    if database.is_empty() || database.len() != query.len() {
        return Err(Error::invalid("fingerprinting needs one database and one query scan per subject"));
    }
    let mut db_subjects: Vec<&str> = database.iter().map(|f| f.labels.subject.as_str()).collect();
    let mut q_subjects: Vec<&str> = query.iter().map(|f| f.labels.subject.as_str()).collect();
    db_subjects.sort_unstable();
    q_subjects.sort_unstable();
    if db_subjects != q_subjects || db_subjects.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("database and query must cover the same subjects, one scan each"));
    }
    let n_pairs = database[0].upper_triangle().len();
    if let Some(m) = mask {
        if m.len() != n_pairs {
            return Err(Error::shape(format!("mask has {} entries for {n_pairs} connections", m.len())));
        }
        if m.iter().filter(|&&k| k).count() < 2 {
            return Err(Error::invalid("connection mask selects fewer than 2 connections"));
        }
    }
    let db: Vec<Vec<f64>> = database.iter().map(|f| masked(&f.upper_triangle(), mask)).collect();
    let matches = query
        .iter()
        .filter(|q| {
            let qv = masked(&q.upper_triangle(), mask);
            let scores: Vec<f64> = db.iter().map(|d| pearson(&qv, d).unwrap_or(f64::NEG_INFINITY)).collect();
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == best).collect();
            best > f64::NEG_INFINITY && winners.len() == 1 && database[winners[0]].labels.subject == q.labels.subject
        })
        .count();
    Ok(matches as f64 / query.len() as f64)
}

/// Match rate pooled over both database/query assignments.
pub fn fingerprint_pooled(a: &[FcMatrix], b: &[FcMatrix], mask: Option<&[bool]>) -> Result<f64> {
    Ok(0.5 * (fingerprint(a, b, mask)? + fingerprint(b, a, mask)?))
}

fn check_nested(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> Result<()> {
    let same = a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u.len() == v.len()));
    if !same {
        return Err(Error::shape("estimate and reference shapes differ"));
    }
    Ok(())
}

/// Mean over sessions and subjects of the per-(session, subject) root mean
/// squared error across connections. Indexed `[session][subject][pair]`.
pub fn rmse_validity(estimates: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>]) -> Result<f64> {
    check_nested(estimates, truth)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (ea, ta) in estimates.iter().zip(truth) {
        for (es, ts) in ea.iter().zip(ta) {
            if es.is_empty() {
                return Err(Error::invalid("RMSE needs at least one connection"));
            }
            let mse = es.iter().zip(ts).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / es.len() as f64;
            total += mse.sqrt();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("RMSE needs at least one session and subject"));
    }
    Ok(total / n as f64)
}

/// Mean absolute change of scrubbed FC relative to random censoring.
/// `scrubbed[r][s][p]`; `random[r][s][q][p]` over Q permutations.
pub fn mac(scrubbed: &[Vec<Vec<f64>>], random: &[Vec<Vec<Vec<f64>>>]) -> Result<f64> {
    let r = scrubbed.len();
    if r == 0 || random.len() != r {
        return Err(Error::shape("scrubbed and random FC need the same runs"));
    }
    let s = scrubbed[0].len();
    let p = scrubbed[0].first().map_or(0, Vec::len);
    if s == 0 || p == 0 {
        return Err(Error::invalid("MAC needs at least one subject and connection"));
    }
    let mut acc = DMatrix::<f64>::zeros(s, p);
    for (sr, rr) in scrubbed.iter().zip(random) {
        if sr.len() != s || rr.len() != s {
            return Err(Error::shape("every run needs the same subjects"));
        }
        for (si, (z, perms)) in sr.iter().zip(rr).enumerate() {
            if perms.is_empty() {
                return Err(Error::invalid("MAC needs at least one random permutation"));
            }
            if z.len() != p || perms.iter().any(|q| q.len() != p) {
                return Err(Error::shape("every FC vector needs the same connections"));
            }
            let qn = perms.len() as f64;
            for k in 0..p {
                // averaging differences keeps identical FC at exactly zero
                acc[(si, k)] += perms.iter().map(|q| z[k] - q[k]).sum::<f64>() / qn;
            }
        }
    }
    Ok(acc.iter().map(|d| (d / r as f64).abs()).sum::<f64>() / (s * p) as f64)
}

/// `n_flagged` volumes of `n_volumes` drawn uniformly without replacement.
pub fn random_flags(n_volumes: usize, n_flagged: usize, rng: &mut impl Rng) -> Result<Vec<bool>> {
    if n_flagged > n_volumes {
        return Err(Error::invalid(format!("cannot censor {n_flagged} of {n_volumes} volumes")));
    }
    let mut flags = vec![false; n_volumes];
    for i in sample(rng, n_volumes, n_flagged) {
        flags[i] = true;
    }
    Ok(flags)
}
