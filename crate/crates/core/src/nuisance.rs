//! Nuisance design matrices and simultaneous regression.
//!
//! A design is an intercept, optional DCT drift bases, the regressors of a
//! denoising strategy, and one one-hot spike column per flagged volume.
//! Regressing on spike columns is equivalent to deleting those volumes from
//! both data and design before fitting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{dct_basis, RealignmentParams, ScanMatrix};
use crate::error::{Error, Result};
use crate::linalg::{pivoted_qr, thin_svd, numerical_rank};

/// Number of DCT drift bases.
pub const DCT_COUNT: usize = 4;
/// Relative pivot tolerance for dropping dependent design columns.
pub const DESIGN_RANK_TOL: f64 = 1e-10;

/// Design column identity. Indices are 1-based, volume indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ColumnLabel {
    Intercept,
    Dct(usize),
    NoisePc { roi: String, index: usize },
    MeanRoi(String),
    GlobalSignal,
    Rp(usize),
    /// Expansion of a base regressor: `kind` is `derivative`, `square` or `square_derivative`.
    Expanded { base: Box<ColumnLabel>, kind: Expansion },
    Spike(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Expansion {
    Derivative,
    Square,
    SquareDerivative,
}

impl std::fmt::Display for ColumnLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnLabel::Intercept => write!(f, "intercept"),
            ColumnLabel::Dct(k) => write!(f, "dct({k})"),
            ColumnLabel::NoisePc { roi, index } => write!(f, "noise_pc({roi},{index})"),
            ColumnLabel::MeanRoi(roi) => write!(f, "mean_roi({roi})"),
            ColumnLabel::GlobalSignal => write!(f, "global_signal"),
            ColumnLabel::Rp(i) => write!(f, "rp({i})"),
            ColumnLabel::Expanded { base, kind } => {
                let suffix = match kind {
                    Expansion::Derivative => "derivative",
                    Expansion::Square => "square",
                    Expansion::SquareDerivative => "square_derivative",
                };
                write!(f, "{base}_{suffix}")
            }
            ColumnLabel::Spike(t) => write!(f, "spike({t})"),
        }
    }
}

/// Denoising strategy. `x` counts principal components per noise ROI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Mpp,
    Dct4,
    Ccx(usize),
    P2,
    P9,
    P36,
    CcxMp6(usize),
    CcxMp24(usize),
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Mpp => write!(f, "mpp"),
            Strategy::Dct4 => write!(f, "dct4"),
            Strategy::Ccx(x) => write!(f, "cc{x}"),
            Strategy::P2 => write!(f, "2p"),
            Strategy::P9 => write!(f, "9p"),
            Strategy::P36 => write!(f, "36p"),
            Strategy::CcxMp6(x) => write!(f, "cc{x}mp6"),
            Strategy::CcxMp24(x) => write!(f, "cc{x}mp24"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace(['+', '_', '-'], "");
        let strategy = match s.as_str() {
            "mpp" => Strategy::Mpp,
            "dct4" | "dct" => Strategy::Dct4,
            "2p" | "p2" => Strategy::P2,
            "9p" | "p9" => Strategy::P9,
            "36p" | "p36" => Strategy::P36,
            other => {
                let rest = other
                    .strip_prefix("cc")
                    .ok_or_else(|| Error::invalid(format!("unknown denoising strategy {s:?}")))?;
                let (digits, tail) = rest.split_at(rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len()));
                let x: usize = digits
                    .parse()
                    .map_err(|_| Error::invalid(format!("CompCor strategy {s:?} needs a component count")))?;
                match tail {
                    "" => Strategy::Ccx(x),
                    "mp6" | "6mp" => Strategy::CcxMp6(x),
                    "mp24" | "24mp" => Strategy::CcxMp24(x),
                    _ => return Err(Error::invalid(format!("unknown denoising strategy {s:?}"))),
                }
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> Self {
        s.to_string()
    }
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Ccx(x) | Strategy::CcxMp6(x) | Strategy::CcxMp24(x) if !(1..=10).contains(&x) => {
                Err(Error::invalid(format!("CompCor needs 1 <= x <= 10 components, got {x}")))
            }
            _ => Ok(()),
        }
    }

    /// DCT detrending is on for every strategy except `mpp`.
    pub fn default_include_dct(&self) -> bool {
        !matches!(self, Strategy::Mpp)
    }

    pub fn needs_rps(&self) -> bool {
        matches!(self, Strategy::P9 | Strategy::P36 | Strategy::CcxMp6(_) | Strategy::CcxMp24(_))
    }

    pub fn needs_noise_rois(&self) -> bool {
        !matches!(self, Strategy::Mpp | Strategy::Dct4)
    }

    pub fn needs_global_signal(&self) -> bool {
        matches!(self, Strategy::P9 | Strategy::P36)
    }
}

/// Named noise-ROI timeseries, each T × Vᵣ.
pub type NoiseRois = Vec<(String, DMatrix<f64>)>;

/// A strategy with the inputs its regressors are built from.
#[derive(Clone, Debug)]
pub struct DenoiseSpec {
    pub strategy: Strategy,
    pub include_dct: bool,
    pub noise_rois: NoiseRois,
    pub global_signal: Option<Vec<f64>>,
    pub rps: Option<RealignmentParams>,
}

impl DenoiseSpec {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            include_dct: strategy.default_include_dct(),
            noise_rois: Vec::new(),
            global_signal: None,
            rps: None,
        }
    }

    pub fn with_noise_rois(mut self, rois: NoiseRois) -> Self {
        self.noise_rois = rois;
        self
    }

    pub fn with_global_signal(mut self, gs: Vec<f64>) -> Self {
        self.global_signal = Some(gs);
        self
    }

    pub fn with_rps(mut self, rps: RealignmentParams) -> Self {
        self.rps = Some(rps);
        self
    }

    pub fn with_dct(mut self, include: bool) -> Self {
        self.include_dct = include;
        self
    }
}

impl Default for DenoiseSpec {
    /// CC2 + MP6 with DCT detrending.
    fn default() -> Self {
        Self::new(Strategy::CcxMp6(2))
    }
}

#[derive(Clone, Debug)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<ColumnLabel>,
    pub rank: usize,
    /// Columns dropped as linearly dependent on earlier pivots.
    pub dropped: Vec<usize>,
}

impl DesignMatrix {
    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn spike_volumes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .filter_map(|l| if let ColumnLabel::Spike(t) = l { Some(*t) } else { None })
            .collect()
    }

    pub fn label_strings(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.to_string()).collect()
    }

    /// Design without its spike columns.
    pub fn without_spikes(&self) -> DesignMatrix {
        let keep: Vec<usize> = (0..self.labels.len())
            .filter(|&j| !matches!(self.labels[j], ColumnLabel::Spike(_)))
            .collect();
        finish_design(
            self.values.select_columns(keep.iter()),
            keep.iter().map(|&j| self.labels[j].clone()).collect(),
        )
    }
}

fn check_rows(name: &str, rows: usize, t: usize) -> Result<()> {
    if rows != t {
        return Err(Error::shape(format!("{name} has {rows} volumes but the scan has {t}")));
    }
    Ok(())
}

/// Top-`x` left singular vectors of each column-centered ROI matrix.
pub fn acompcor_regressors(rois: &[(String, DMatrix<f64>)], x: usize) -> Result<(DMatrix<f64>, Vec<ColumnLabel>)> {
    if rois.is_empty() {
        return Err(Error::invalid("CompCor needs at least one noise ROI"));
    }
    let t = rois[0].1.nrows();
    let mut cols = Vec::new();
    let mut labels = Vec::new();
    for (name, m) in rois {
        check_rows(&format!("noise ROI {name:?}"), m.nrows(), t)?;
        let mut centered = m.clone();
        for mut c in centered.column_iter_mut() {
            let mean = c.mean();
            c.add_scalar_mut(-mean);
        }
        let svd = thin_svd(&centered);
        let rank = numerical_rank(&svd.singular_values, centered.nrows(), centered.ncols());
        if x > rank {
            return Err(Error::invalid(format!(
                "noise ROI {name:?} has rank {rank}, fewer than the {x} requested components"
            )));
        }
        for j in 0..x {
            cols.push(svd.u.column(j).clone_owned());
            labels.push(ColumnLabel::NoisePc {
                roi: name.clone(),
                index: j + 1,
            });
        }
    }
    Ok((DMatrix::from_columns(&cols), labels))
}

/// Column means of each ROI matrix.
pub fn mean_roi_regressors(rois: &[(String, DMatrix<f64>)]) -> Result<(DMatrix<f64>, Vec<ColumnLabel>)> {
    if rois.is_empty() {
        return Err(Error::invalid("mean-signal regressors need at least one noise ROI"));
    }
    let t = rois[0].1.nrows();
    let mut out = DMatrix::zeros(t, rois.len());
    for (j, (name, m)) in rois.iter().enumerate() {
        check_rows(&format!("noise ROI {name:?}"), m.nrows(), t)?;
        if m.ncols() == 0 {
            return Err(Error::invalid(format!("noise ROI {name:?} has no locations")));
        }
        for (i, row) in m.row_iter().enumerate() {
            out[(i, j)] = row.mean();
        }
    }
    Ok((out, rois.iter().map(|(n, _)| ColumnLabel::MeanRoi(n.clone())).collect()))
}

/// Base columns, then one-back differences (first row 0), squares, and
/// squared one-back differences.
pub fn expand_24(base: &DMatrix<f64>, labels: &[ColumnLabel]) -> (DMatrix<f64>, Vec<ColumnLabel>) {
    let (t, k) = base.shape();
    let mut deriv = DMatrix::zeros(t, k);
    for i in 1..t {
        for j in 0..k {
            deriv[(i, j)] = base[(i, j)] - base[(i - 1, j)];
        }
    }
    let square = base.map(|v| v * v);
    let square_deriv = deriv.map(|v| v * v);
    let mut out = DMatrix::zeros(t, 4 * k);
    out.columns_mut(0, k).copy_from(base);
    out.columns_mut(k, k).copy_from(&deriv);
    out.columns_mut(2 * k, k).copy_from(&square);
    out.columns_mut(3 * k, k).copy_from(&square_deriv);
    let mut all = labels.to_vec();
    for kind in [Expansion::Derivative, Expansion::Square, Expansion::SquareDerivative] {
        all.extend(labels.iter().map(|l| ColumnLabel::Expanded {
            base: Box::new(l.clone()),
            kind,
        }));
    }
    (out, all)
}

/// Raw RPs (order 6) or their 24-column expansion (order 24).
pub fn rp_expansion(rp: &RealignmentParams, order: usize) -> Result<(DMatrix<f64>, Vec<ColumnLabel>)> {
    let labels: Vec<ColumnLabel> = (1..=6).map(ColumnLabel::Rp).collect();
    match order {
        6 => Ok((rp.values().clone(), labels)),
        24 => Ok(expand_24(rp.values(), &labels)),
        other => Err(Error::invalid(format!("RP expansion order must be 6 or 24, got {other}"))),
    }
}

fn finish_design(values: DMatrix<f64>, labels: Vec<ColumnLabel>) -> DesignMatrix {
    let qr = pivoted_qr(&values, DESIGN_RANK_TOL);
    DesignMatrix {
        rank: qr.rank(),
        dropped: qr.dropped,
        values,
        labels,
    }
}

/// Assemble intercept, DCT bases, strategy regressors and spike columns.
pub fn build_design(spec: &DenoiseSpec, n_volumes: usize, flags: Option<&[bool]>) -> Result<DesignMatrix> {
    let t = n_volumes;
    spec.strategy.validate()?;
    let mut blocks: Vec<(DMatrix<f64>, Vec<ColumnLabel>)> = vec![(DMatrix::from_element(t, 1, 1.0), vec![ColumnLabel::Intercept])];
    if spec.include_dct {
        let dct = dct_basis(t, DCT_COUNT)?;
        blocks.push((dct.values().clone(), (1..=DCT_COUNT).map(ColumnLabel::Dct).collect()));
    }

    let rps = || -> Result<&RealignmentParams> {
        let rp = spec
            .rps
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("strategy {} needs realignment parameters", spec.strategy)))?;
        check_rows("realignment parameters", rp.n_volumes(), t)?;
        Ok(rp)
    };
    let rois = || -> Result<&NoiseRois> {
        if spec.noise_rois.is_empty() {
            return Err(Error::invalid(format!("strategy {} needs noise-ROI timeseries", spec.strategy)));
        }
        for (name, m) in &spec.noise_rois {
            check_rows(&format!("noise ROI {name:?}"), m.nrows(), t)?;
        }
        Ok(&spec.noise_rois)
    };
    let nine_p = || -> Result<(DMatrix<f64>, Vec<ColumnLabel>)> {
        let (means, mut labels) = mean_roi_regressors(rois()?)?;
        let gs = spec
            .global_signal
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("strategy {} needs a global signal", spec.strategy)))?;
        check_rows("global signal", gs.len(), t)?;
        let rp = rps()?;
        let k = means.ncols();
        let mut m = DMatrix::zeros(t, k + 7);
        m.columns_mut(0, k).copy_from(&means);
        m.columns_mut(k, 6).copy_from(rp.values());
        m.column_mut(k + 6).copy_from_slice(gs);
        labels.extend((1..=6).map(ColumnLabel::Rp));
        labels.push(ColumnLabel::GlobalSignal);
        Ok((m, labels))
    };

    match spec.strategy {
        Strategy::Mpp | Strategy::Dct4 => {}
        Strategy::Ccx(x) => blocks.push(acompcor_regressors(rois()?, x)?),
        Strategy::P2 => blocks.push(mean_roi_regressors(rois()?)?),
        Strategy::P9 => blocks.push(nine_p()?),
        Strategy::P36 => {
            let (m, l) = nine_p()?;
            blocks.push(expand_24(&m, &l));
        }
        Strategy::CcxMp6(x) => {
            blocks.push(acompcor_regressors(rois()?, x)?);
            blocks.push(rp_expansion(rps()?, 6)?);
        }
        Strategy::CcxMp24(x) => {
            blocks.push(acompcor_regressors(rois()?, x)?);
            blocks.push(rp_expansion(rps()?, 24)?);
        }
    }

    if let Some(flags) = flags {
        check_rows("flag vector", flags.len(), t)?;
        let spikes: Vec<usize> = flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect();
        let mut m = DMatrix::zeros(t, spikes.len());
        for (j, &v) in spikes.iter().enumerate() {
            m[(v, j)] = 1.0;
        }
        blocks.push((m, spikes.into_iter().map(ColumnLabel::Spike).collect()));
    }

    let m: usize = blocks.iter().map(|b| b.0.ncols()).sum();
    if m >= t {
        return Err(Error::DesignSaturated { rows: t, columns: m });
    }
    let mut values = DMatrix::zeros(t, m);
    let mut labels = Vec::with_capacity(m);
    let mut at = 0;
    for (b, l) in blocks {
        values.columns_mut(at, b.ncols()).copy_from(&b);
        at += b.ncols();
        labels.extend(l);
    }
    let design = finish_design(values, labels);
    if !design.dropped.is_empty() {
        let names: Vec<String> = design.dropped.iter().map(|&j| design.labels[j].to_string()).collect();
        log::warn!("design columns dropped as linearly dependent: {}", names.join(", "));
    }
    Ok(design)
}

/// Least-squares residuals of every column of `y` on `design`. Spike rows are set to exactly zero.
pub fn regress_matrix(y: &DMatrix<f64>, design: &DesignMatrix) -> Result<DMatrix<f64>> {
    check_rows("design", design.values.nrows(), y.nrows())?;
    let qr = pivoted_qr(&design.values, DESIGN_RANK_TOL);
    if qr.rank() == 0 {
        return Err(Error::invalid("design has rank 0"));
    }
    let mut r = qr.residualize(y);
    for t in design.spike_volumes() {
        r.row_mut(t).fill(0.0);
    }
    Ok(r)
}

pub fn regress(scan: &ScanMatrix, design: &DesignMatrix) -> Result<ScanMatrix> {
    scan.with_values(regress_matrix(scan.values(), design)?)
}

/// Delete flagged rows from data and design, then regress. Returns
/// residuals for the kept rows and their volume indices.
pub fn censored_regress(y: &DMatrix<f64>, design: &DesignMatrix, flags: &[bool]) -> Result<(DMatrix<f64>, Vec<usize>)> {
    check_rows("flag vector", flags.len(), y.nrows())?;
    let base = design.without_spikes();
    let kept: Vec<usize> = (0..flags.len()).filter(|&t| !flags[t]).collect();
    if kept.len() <= base.n_columns() {
        return Err(Error::DesignSaturated {
            rows: kept.len(),
            columns: base.n_columns(),
        });
    }
    let yc = y.select_rows(kept.iter());
    let dc = finish_design(base.values.select_rows(kept.iter()), base.labels.clone());
    Ok((regress_matrix(&yc, &dc)?, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn full_spec(rng: &mut ChaCha8Rng, t: usize, strategy: Strategy) -> DenoiseSpec {
        let rois = vec![
            ("wm".to_string(), randn(rng, t, 20)),
            ("csf".to_string(), randn(rng, t, 15)),
            ("cerebellar_wm".to_string(), randn(rng, t, 10)),
        ];
        DenoiseSpec::new(strategy)
            .with_noise_rois(rois)
            .with_rps(RealignmentParams::new(randn(rng, t, 6) * 0.1, 0.72).unwrap())
            .with_global_signal((0..t).map(|i| (i as f64 * 0.1).sin()).collect())
    }

    #[test]
    fn strategy_names() {
        for (s, want) in [
            ("mpp", Strategy::Mpp),
            ("dct4", Strategy::Dct4),
            ("cc2", Strategy::Ccx(2)),
            ("cc2mp6", Strategy::CcxMp6(2)),
            ("CC2+MP6", Strategy::CcxMp6(2)),
            ("cc5mp24", Strategy::CcxMp24(5)),
            ("2p", Strategy::P2),
            ("9P", Strategy::P9),
            ("36p", Strategy::P36),
        ] {
            assert_eq!(s.parse::<Strategy>().unwrap(), want, "{s}");
            assert_eq!(want.to_string().parse::<Strategy>().unwrap(), want);
        }
        assert!("cc0".parse::<Strategy>().is_err());
        assert!("cc11".parse::<Strategy>().is_err());
        assert!("cc".parse::<Strategy>().is_err());
        assert!("gsr".parse::<Strategy>().is_err());
    }

    #[test]
    fn column_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = 100;
        let d = build_design(&DenoiseSpec::new(Strategy::Dct4), t, None).unwrap();
        assert_eq!(d.n_columns(), 5);
        assert_eq!(d.rank, 5);
        assert_eq!(build_design(&DenoiseSpec::new(Strategy::Mpp), t, None).unwrap().n_columns(), 1);

        let mut flags = vec![false; t];
        for i in (5..100).step_by(10) {
            flags[i] = true;
        }
        let spec = full_spec(&mut rng, t, Strategy::CcxMp6(2));
        let d = build_design(&spec, t, Some(&flags)).unwrap();
        assert_eq!(d.n_columns(), 1 + 4 + 6 + 6 + 10);
        for (j, l) in d.labels.iter().enumerate() {
            if let ColumnLabel::Spike(v) = l {
                let col = d.values.column(j);
                assert_eq!(col.iter().filter(|&&x| x == 1.0).count(), 1);
                assert_eq!(col.iter().filter(|&&x| x == 0.0).count(), t - 1);
                assert_eq!(col[*v], 1.0);
            }
        }
        let names = d.label_strings();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());

        assert_eq!(build_design(&full_spec(&mut rng, t, Strategy::P2), t, None).unwrap().n_columns(), 1 + 4 + 3);
        assert_eq!(build_design(&full_spec(&mut rng, t, Strategy::P9), t, None).unwrap().n_columns(), 1 + 4 + 10);
        assert_eq!(build_design(&full_spec(&mut rng, t, Strategy::P36), t, None).unwrap().n_columns(), 1 + 4 + 40);
        assert_eq!(build_design(&full_spec(&mut rng, t, Strategy::CcxMp24(1)), t, None).unwrap().n_columns(), 1 + 4 + 3 + 24);
    }

    #[test]
    fn saturated_design_rejected() {
        let flags = vec![true; 10];
        let err = build_design(&DenoiseSpec::new(Strategy::Dct4), 10, Some(&flags)).unwrap_err();
        assert!(matches!(err, Error::DesignSaturated { rows: 10, columns: 15 }));
        assert!(err.to_string().contains("design saturates timepoints"));
    }

    #[test]
    fn missing_inputs_are_validation_errors() {
        let e = build_design(&DenoiseSpec::new(Strategy::CcxMp6(2)), 50, None).unwrap_err();
        assert!(e.is_validation());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut spec = full_spec(&mut rng, 50, Strategy::P9);
        spec.global_signal = None;
        assert!(build_design(&spec, 50, None).is_err());
        let spec = full_spec(&mut rng, 50, Strategy::Ccx(2));
        assert!(build_design(&spec, 60, None).is_err());
    }

    #[test]
    fn rank_one_roi_gives_its_timecourse() {
        let t = 40;
        let shared: Vec<f64> = (0..t).map(|i| (i as f64 * 0.4).sin()).collect();
        let roi = DMatrix::from_fn(t, 6, |i, j| shared[i] * (j as f64 + 1.0) + 3.0 * j as f64);
        let (m, labels) = acompcor_regressors(&[("wm".into(), roi)], 1).unwrap();
        assert_eq!(labels, vec![ColumnLabel::NoisePc { roi: "wm".into(), index: 1 }]);
        let mean = shared.iter().sum::<f64>() / t as f64;
        let centered: Vec<f64> = shared.iter().map(|s| s - mean).collect();
        let r = crate::linalg::pearson(m.column(0).as_slice(), &centered).unwrap();
        assert!((r.abs() - 1.0).abs() < 1e-12);
        let roi2 = DMatrix::from_fn(t, 6, |i, j| shared[i] * (j as f64 + 1.0));
        let err = acompcor_regressors(&[("csf".into(), roi2)], 2).unwrap_err();
        assert!(err.to_string().contains("csf"));
    }

    #[test]
    fn planted_roi_subspace_matches_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 120;
        let sources = randn(&mut rng, t, 3);
        let roi = &sources * randn(&mut rng, 3, 30) + randn(&mut rng, t, 30) * 1e-3;
        let (m, _) = acompcor_regressors(&[("wm".into(), roi.clone())], 3).unwrap();
        // oracle: eigenvectors of the centered ROI's row covariance
        let mut c = roi.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let eig = nalgebra::SymmetricEigen::new(&c * c.transpose());
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let oracle = eig.eigenvectors.select_columns(order[..3].iter());
        assert!(crate::linalg::max_principal_angle(&m, &oracle) < 1e-8);
    }

    #[test]
    fn rp_expansion_by_hand() {
        let mut v = DMatrix::zeros(3, 6);
        v[(1, 0)] = 1.0;
        let rp = RealignmentParams::new(v, 1.0).unwrap();
        let (m, labels) = rp_expansion(&rp, 24).unwrap();
        assert_eq!(m.ncols(), 24);
        assert_eq!(m.column(6).as_slice(), &[0.0, 1.0, -1.0]);
        assert_eq!(m.column(12).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(m.column(18).as_slice(), &[0.0, 1.0, 1.0]);
        assert_eq!(labels[6].to_string(), "rp(1)_derivative");
        assert_eq!(labels[18].to_string(), "rp(1)_square_derivative");
        let (c, _) = rp_expansion(&RealignmentParams::new(DMatrix::from_element(5, 6, 2.0), 1.0).unwrap(), 24).unwrap();
        assert!(c.columns(6, 6).iter().all(|&x| x == 0.0));
        assert!(c.columns(12, 6).iter().all(|&x| x == 4.0));
        assert!(rp_expansion(&rp, 12).is_err());
    }

    #[test]
    fn regression_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 80;
        let spec = full_spec(&mut rng, t, Strategy::CcxMp6(2));
        let d = build_design(&spec, t, None).unwrap();
        let y = randn(&mut rng, t, 12);
        let r = regress_matrix(&y, &d).unwrap();
        assert!(d.values.tr_mul(&r).abs().max() < 1e-8 * y.norm());
        let again = regress_matrix(&r, &d).unwrap();
        assert!((again - &r).abs().max() < 1e-10);
        let fitted_col = d.values.columns(3, 1).clone_owned();
        assert!(regress_matrix(&fitted_col, &d).unwrap().abs().max() < 1e-10);
    }

    #[test]
    fn orthogonal_data_unchanged() {
        let t = 64;
        let d = build_design(&DenoiseSpec::new(Strategy::Mpp), t, None).unwrap();
        let y = DMatrix::from_fn(t, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        assert!((regress_matrix(&y, &d).unwrap() - &y).abs().max() < 1e-12);
    }

    #[test]
    fn spike_regression_equals_censoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 90;
        let spec = full_spec(&mut rng, t, Strategy::CcxMp6(2));
        let flags: Vec<bool> = (0..t).map(|i| i % 7 == 3).collect();
        let d = build_design(&spec, t, Some(&flags)).unwrap();
        let y = randn(&mut rng, t, 8);
        let spiked = regress_matrix(&y, &d).unwrap();
        let (censored, kept) = censored_regress(&y, &d, &flags).unwrap();
        for (k, &row) in kept.iter().enumerate() {
            assert!((spiked.row(row) - censored.row(k)).abs().max() < 1e-8);
        }
        for t in d.spike_volumes() {
            assert!(spiked.row(t).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dependent_columns_reported() {
        let t = 30;
        let rois = vec![("a".to_string(), DMatrix::from_fn(t, 1, |i, _| i as f64))];
        let spec = DenoiseSpec::new(Strategy::P2).with_noise_rois(rois).with_dct(false);
        let d = build_design(&spec, t, Some(&vec![false; t])).unwrap();
        assert_eq!(d.rank, 2);
        let dup = vec![("a".to_string(), DMatrix::from_element(t, 1, 5.0))];
        let d = build_design(&DenoiseSpec::new(Strategy::P2).with_noise_rois(dup).with_dct(false), t, None).unwrap();
        assert_eq!(d.rank, 1);
        assert_eq!(d.dropped.len(), 1);
    }
}
