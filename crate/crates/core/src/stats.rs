//! Rank-based significance testing over model-by-dataset score matrices:
//! aligned-rank transformation, the Friedman aligned-ranks chi-square test,
//! and a step-down post-hoc comparison against the best-ranked model.
//!
//! Tail probabilities come from an in-crate regularized incomplete gamma
//! (power series below `a + 1`, Lentz continued fraction above), which
//! covers the chi-square upper tail and the two-sided normal p without any
//! heavyweight numeric dependency.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least two models, got {0}")]
    TooFewModels(usize),
    #[error("need at least one dataset")]
    NoDatasets,
    #[error("score for ({model}, {dataset}) is not finite")]
    NonFinite { model: String, dataset: String },
    #[error("row for model {model:?} has {got} scores, expected {expected}")]
    RaggedRow {
        model: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate model {0:?}")]
    DuplicateModel(String),
    #[error("duplicate dataset {0:?}")]
    DuplicateDataset(String),
    #[error("duplicate score for ({model}, {dataset})")]
    DuplicateCell { model: String, dataset: String },
    #[error("missing scores for: {}", render_cells(.0))]
    MissingCells(Vec<(String, String)>),
    #[error("{path}: {message}")]
    BadTable { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("invalid argument: {0}")]
    InvalidParam(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn render_cells(cells: &[(String, String)]) -> String {
    cells
        .iter()
        .map(|(m, d)| format!("({m}, {d})"))
        .collect::<Vec<_>>()
        .join(", ")
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection; sin(pi x) > 0 on (0, 0.5)
        return PI.ln() - (PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_ITMAX: usize = 500;
const FPMIN: f64 = 1e-300;

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..=GAMMA_ITMAX {
        term *= x / (a + n as f64);
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_ITMAX {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> Result<f64, StatsError> {
    if a <= 0.0 || x < 0.0 || !a.is_finite() || !x.is_finite() {
        return Err(StatsError::InvalidParam(format!(
            "gamma_p requires a > 0 and x >= 0, got a = {a}, x = {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        Ok(gamma_series(a, x))
    } else {
        Ok(1.0 - gamma_continued_fraction(a, x))
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> Result<f64, StatsError> {
    if a <= 0.0 || x < 0.0 || !a.is_finite() || !x.is_finite() {
        return Err(StatsError::InvalidParam(format!(
            "gamma_q requires a > 0 and x >= 0, got a = {a}, x = {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_series(a, x))
    } else {
        Ok(gamma_continued_fraction(a, x))
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x == 0.0 {
        1.0
    } else {
        gamma_q(0.5, x * x).expect("valid domain")
    }
}

/// Two-sided tail probability of a standard normal at |z|.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::InvalidParam("chi2_sf requires df >= 1".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    gamma_q(df as f64 / 2.0, x / 2.0)
}

// ---------------------------------------------------------------------------
// Score matrix
// ---------------------------------------------------------------------------

/// A models-by-datasets score table. Rows are models, columns datasets, and
/// every cell must be present and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    /// `scores[model_index][dataset_index]`
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRecord {
    model: String,
    dataset: String,
    score: f64,
}

impl ScoreMatrix {
    pub fn new(
        models: Vec<String>,
        datasets: Vec<String>,
        scores: Vec<Vec<f64>>,
    ) -> Result<Self, StatsError> {
        let matrix = ScoreMatrix {
            models,
            datasets,
            scores,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    fn validate(&self) -> Result<(), StatsError> {
        if self.models.len() < 2 {
            return Err(StatsError::TooFewModels(self.models.len()));
        }
        if self.datasets.is_empty() {
            return Err(StatsError::NoDatasets);
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m) {
                return Err(StatsError::DuplicateModel(m.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for d in &self.datasets {
            if !seen.insert(d) {
                return Err(StatsError::DuplicateDataset(d.clone()));
            }
        }
        if self.scores.len() != self.models.len() {
            return Err(StatsError::RaggedRow {
                model: "<table>".into(),
                expected: self.models.len(),
                got: self.scores.len(),
            });
        }
        for (m, row) in self.models.iter().zip(&self.scores) {
            if row.len() != self.datasets.len() {
                return Err(StatsError::RaggedRow {
                    model: m.clone(),
                    expected: self.datasets.len(),
                    got: row.len(),
                });
            }
            for (d, s) in self.datasets.iter().zip(row) {
                if !s.is_finite() {
                    return Err(StatsError::NonFinite {
                        model: m.clone(),
                        dataset: d.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    /// Read a CSV table whose header is `model,<dataset>,...` and whose
    /// rows are a model name followed by one score per dataset.
    pub fn from_csv(path: &Path) -> Result<Self, StatsError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 2 {
            return Err(StatsError::BadTable {
                path: path.to_path_buf(),
                message: "header must name a model column and at least one dataset".into(),
            });
        }
        let datasets: Vec<String> = headers.iter().skip(1).map(|h| h.to_string()).collect();
        let mut models = Vec::new();
        let mut scores = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row_no = i + 2;
            let model = record
                .get(0)
                .ok_or_else(|| StatsError::BadTable {
                    path: path.to_path_buf(),
                    message: format!("row {row_no}: empty record"),
                })?
                .to_string();
            if record.len() != headers.len() {
                return Err(StatsError::RaggedRow {
                    model,
                    expected: datasets.len(),
                    got: record.len().saturating_sub(1),
                });
            }
            let mut row = Vec::with_capacity(datasets.len());
            for (j, cell) in record.iter().skip(1).enumerate() {
                let value: f64 = cell.parse().map_err(|_| StatsError::BadTable {
                    path: path.to_path_buf(),
                    message: format!(
                        "row {row_no}, column {:?}: cannot parse {cell:?} as a number",
                        datasets[j]
                    ),
                })?;
                row.push(value);
            }
            models.push(model);
            scores.push(row);
        }
        ScoreMatrix::new(models, datasets, scores)
    }

    /// Read JSONL `{model, dataset, score}` cells. Model and dataset order
    /// follow first appearance; the cross product must be complete.
    pub fn from_jsonl(path: &Path) -> Result<Self, StatsError> {
        let mut models: Vec<String> = Vec::new();
        let mut datasets: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
        for item in jsonl::read_records::<CellRecord>(path)? {
            let located = item?;
            let cell = located.value;
            if !models.contains(&cell.model) {
                models.push(cell.model.clone());
            }
            if !datasets.contains(&cell.dataset) {
                datasets.push(cell.dataset.clone());
            }
            if cells
                .insert((cell.model.clone(), cell.dataset.clone()), cell.score)
                .is_some()
            {
                return Err(StatsError::DuplicateCell {
                    model: cell.model,
                    dataset: cell.dataset,
                });
            }
        }
        let mut missing = Vec::new();
        for m in &models {
            for d in &datasets {
                if !cells.contains_key(&(m.clone(), d.clone())) {
                    missing.push((m.clone(), d.clone()));
                }
            }
        }
        if !missing.is_empty() {
            return Err(StatsError::MissingCells(missing));
        }
        let scores: Vec<Vec<f64>> = models
            .iter()
            .map(|m| {
                datasets
                    .iter()
                    .map(|d| cells[&(m.clone(), d.clone())])
                    .collect()
            })
            .collect();
        ScoreMatrix::new(models, datasets, scores)
    }

    pub fn to_csv(&self, path: &Path) -> Result<(), StatsError> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["model".to_string()];
        header.extend(self.datasets.iter().cloned());
        writer.write_record(&header)?;
        for (m, row) in self.models.iter().zip(&self.scores) {
            let mut record = vec![m.clone()];
            record.extend(row.iter().map(|s| s.to_string()));
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|source| StatsError::Write {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Aligned ranks and the Friedman aligned-ranks test
// ---------------------------------------------------------------------------

/// Rank `values` jointly in descending order (rank 1 = largest), averaging
/// tied positions. All values must be finite.
pub fn rank_descending_avg_ties(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("values are finite")
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of positions i+1 ..= j+1
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Per-cell aligned ranks: each score has its dataset mean subtracted, and
/// the resulting `k*n` values are ranked jointly (descending, ties
/// averaged). Shape matches the input matrix.
pub fn aligned_ranks(matrix: &ScoreMatrix) -> Result<Vec<Vec<f64>>, StatsError> {
    matrix.validate()?;
    let k = matrix.n_models();
    let n = matrix.n_datasets();
    let mut dataset_means = vec![0.0f64; n];
    for row in &matrix.scores {
        for (j, s) in row.iter().enumerate() {
            dataset_means[j] += s;
        }
    }
    for mean in &mut dataset_means {
        *mean /= k as f64;
    }
    // Flatten row-major, rank jointly, reshape.
    let mut aligned = Vec::with_capacity(k * n);
    for row in &matrix.scores {
        for (j, s) in row.iter().enumerate() {
            aligned.push(s - dataset_means[j]);
        }
    }
    let flat_ranks = rank_descending_avg_ties(&aligned);
    Ok(flat_ranks.chunks(n).map(|c| c.to_vec()).collect())
}

/// Outcome of the aligned-ranks chi-square test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarTest {
    pub k: usize,
    pub n: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// True when the statistic's denominator was non-positive and the test
    /// fell back to `statistic = 0`, `p = 1`. Ranks produced from any real
    /// score table keep the denominator strictly positive (ties only shrink
    /// the concentrated sum of squares), so this is a defensive guard, not
    /// an expected outcome.
    pub degenerate: bool,
    /// Mean aligned rank per model, in matrix row order.
    pub mean_ranks: Vec<(String, f64)>,
}

/// Friedman aligned-ranks test across models (treatments) blocked by
/// dataset. Small statistics mean the models are indistinguishable; the
/// p-value is the chi-square upper tail with `k - 1` degrees of freedom.
pub fn far_test(matrix: &ScoreMatrix) -> Result<FarTest, StatsError> {
    let ranks = aligned_ranks(matrix)?;
    let k = matrix.n_models();
    let n = matrix.n_datasets();
    let kn = (k * n) as f64;

    let model_totals: Vec<f64> = ranks.iter().map(|row| row.iter().sum()).collect();
    let mut dataset_totals = vec![0.0f64; n];
    for row in &ranks {
        for (j, r) in row.iter().enumerate() {
            dataset_totals[j] += r;
        }
    }

    let sum_model_sq: f64 = model_totals.iter().map(|t| t * t).sum();
    let sum_dataset_sq: f64 = dataset_totals.iter().map(|t| t * t).sum();

    let numerator = (k as f64 - 1.0)
        * (sum_model_sq - (k as f64) * (n as f64).powi(2) / 4.0 * (kn + 1.0).powi(2));
    let denominator = kn * (kn + 1.0) * (2.0 * kn + 1.0) / 6.0 - sum_dataset_sq / k as f64;

    let df = k - 1;
    let (statistic, p_value, degenerate) = if denominator <= 0.0 {
        (0.0, 1.0, true)
    } else {
        let t = numerator / denominator;
        (t, chi2_sf(t, df)?, false)
    };

    let mean_ranks = matrix
        .models
        .iter()
        .cloned()
        .zip(model_totals.iter().map(|t| t / n as f64))
        .collect();

    Ok(FarTest {
        k,
        n,
        statistic,
        df,
        p_value,
        degenerate,
        mean_ranks,
    })
}

// ---------------------------------------------------------------------------
// Post-hoc comparisons
// ---------------------------------------------------------------------------

/// One model compared against the control.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosthocComparison {
    pub model: String,
    pub mean_rank: f64,
    pub z: f64,
    pub p_raw: f64,
    pub apv: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosthocReport {
    pub control: String,
    pub control_mean_rank: f64,
    pub alpha: f64,
    /// Non-control models, sorted by ascending mean rank.
    pub comparisons: Vec<PosthocComparison>,
}

/// Step-down adjustment: each raw p is divided by `p + 1 - p_max`, where
/// `p_max` is the largest raw p in the family.
pub fn li_adjusted_p(p_raw: &[f64]) -> Vec<f64> {
    let p_max = p_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    p_raw.iter().map(|p| p / (p + 1.0 - p_max)).collect()
}

/// Compare every model to the best ranked one (the control: lowest mean
/// aligned rank, ties broken by name). The z score scales the rank-total
/// difference, `z = n (R̄_j - R̄_c) / sqrt(k (kn + 1) / 6)`; two-sided
/// normal p-values are then step-down adjusted and tested at `alpha`.
pub fn li_posthoc(far: &FarTest, alpha: f64) -> Result<PosthocReport, StatsError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(StatsError::InvalidParam(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if far.mean_ranks.len() < 2 {
        return Err(StatsError::TooFewModels(far.mean_ranks.len()));
    }
    let (k, n) = (far.k as f64, far.n as f64);
    let kn = k * n;
    let scale = (k * (kn + 1.0) / 6.0).sqrt();

    let control = far
        .mean_ranks
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)))
        .expect("at least two models");

    let mut others: Vec<(&String, f64)> = far
        .mean_ranks
        .iter()
        .filter(|(m, _)| m != &control.0)
        .map(|(m, r)| (m, *r))
        .collect();
    others.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(b.0)));

    let zs: Vec<f64> = others
        .iter()
        .map(|(_, r)| n * (r - control.1) / scale)
        .collect();
    let p_raw: Vec<f64> = zs.iter().map(|&z| normal_two_sided_p(z)).collect();
    let apvs = li_adjusted_p(&p_raw);

    let comparisons = others
        .into_iter()
        .zip(zs)
        .zip(p_raw)
        .zip(apvs)
        .map(|((((model, mean_rank), z), p), apv)| PosthocComparison {
            model: model.clone(),
            mean_rank,
            z,
            p_raw: p,
            apv,
            rejected: apv <= alpha,
        })
        .collect();

    Ok(PosthocReport {
        control: control.0.clone(),
        control_mean_rank: control.1,
        alpha,
        comparisons,
    })
}

/// FAR test plus post-hoc comparisons in one call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankReport {
    pub far: FarTest,
    pub posthoc: PosthocReport,
}

pub fn rank_significance(matrix: &ScoreMatrix, alpha: f64) -> Result<RankReport, StatsError> {
    let far = far_test(matrix)?;
    let posthoc = li_posthoc(&far, alpha)?;
    Ok(RankReport { far, posthoc })
}

/// Text rendering: statistic line, then one row per model ordered by mean
/// rank, the control marked with `---` in the comparison columns.
pub fn render_rank_report(report: &RankReport) -> String {
    let far = &report.far;
    let mut out = String::new();
    if far.degenerate {
        out.push_str("aligned-ranks statistic degenerate (all scores tied); p = 1\n");
    } else {
        out.push_str(&format!(
            "aligned-ranks chi-square T = {:.4} (df = {}), p = {:.4}\n",
            far.statistic, far.df, far.p_value
        ));
    }
    out.push_str(&format!(
        "control: {} (alpha = {})\n",
        report.posthoc.control, report.posthoc.alpha
    ));

    let mut rows: Vec<[String; 4]> = vec![[
        "model".into(),
        "FAR".into(),
        "APV".into(),
        "H0".into(),
    ]];
    rows.push([
        report.posthoc.control.clone(),
        format!("{:.2}", report.posthoc.control_mean_rank),
        "---".into(),
        "---".into(),
    ]);
    for c in &report.posthoc.comparisons {
        rows.push([
            c.model.clone(),
            format!("{:.2}", c.mean_rank),
            format!("{:.4}", c.apv),
            if c.rejected {
                "Rejected".into()
            } else {
                "Failed to reject".into()
            },
        ]);
    }
    let widths: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
        assert!(
            (got - want).abs() <= tol,
            "{what}: got {got}, want {want} (tol {tol})"
        );
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert_close(ln_gamma(0.5), 0.572_364_942_924_700_4, 1e-12, "lgamma(0.5)");
        assert_close(ln_gamma(1.0), 0.0, 1e-12, "lgamma(1)");
        assert_close(ln_gamma(2.5), 0.284_682_870_472_919_62, 1e-12, "lgamma(2.5)");
        assert_close(ln_gamma(5.0), 3.178_053_830_347_944_9, 1e-12, "lgamma(5)");
        assert_close(ln_gamma(10.0), 12.801_827_480_081_467, 1e-11, "lgamma(10)");
    }

    #[test]
    fn erfc_reference_values() {
        assert_close(erfc(0.5), 0.479_500_122_186_953_48, 1e-12, "erfc(0.5)");
        assert_close(erfc(1.0), 0.157_299_207_050_285_13, 1e-12, "erfc(1)");
        assert_close(erfc(2.0), 0.004_677_734_981_047_265_4, 1e-12, "erfc(2)");
        let tiny = erfc(5.0);
        assert_close(tiny, 1.537_459_794_428_035_1e-12, 1e-10, "erfc(5) abs");
        assert!(
            (tiny / 1.537_459_794_428_035_1e-12 - 1.0).abs() < 1e-9,
            "erfc(5) relative: {tiny}"
        );
        assert_close(erfc(-1.0), 2.0 - 0.157_299_207_050_285_13, 1e-12, "erfc(-1)");
    }

    #[test]
    fn upper_gamma_matches_closed_forms() {
        // Q(1, x) = exp(-x); Q(2, x) = (1 + x) exp(-x)
        for x in [0.1, 0.5, 1.85, 3.7, 9.0] {
            assert_close(gamma_q(1.0, x).unwrap(), (-x).exp(), 1e-13, "Q(1,x)");
            assert_close(gamma_q(2.0, x).unwrap(), (1.0 + x) * (-x).exp(), 1e-13, "Q(2,x)");
        }
        for x in [0.0, 0.3, 2.0, 10.0] {
            let p = gamma_p(2.5, x).unwrap();
            let q = gamma_q(2.5, x).unwrap();
            assert_close(p + q, 1.0, 1e-12, "P+Q");
        }
    }

    #[test]
    fn gamma_domain_errors() {
        assert!(gamma_p(0.0, 1.0).is_err());
        assert!(gamma_q(-1.0, 1.0).is_err());
        assert!(gamma_q(1.0, -0.5).is_err());
        assert!(chi2_sf(1.0, 0).is_err());
    }

    #[test]
    fn chi_square_tail_reference_values() {
        assert_close(chi2_sf(3.7, 2).unwrap(), 0.157_237_166_313_627_61, 1e-12, "df=2");
        assert_close(chi2_sf(3.7, 4).unwrap(), 0.448_125_923_993_838_72, 1e-12, "df=4");
        assert_close(chi2_sf(9.2, 6).unwrap(), 0.162_638_702_348_171_4, 1e-12, "df=6");
        assert_close(chi2_sf(14.2, 10).unwrap(), 0.164_062_903_757_719_15, 1e-12, "df=10");
        assert_close(chi2_sf(1.6, 1).unwrap(), 0.205_903_210_732_068_3, 1e-11, "df=1");
        assert_close(chi2_sf(11.07, 5).unwrap(), 0.050_009_618_622_405_48, 1e-11, "df=5");
        assert_eq!(chi2_sf(0.0, 5).unwrap(), 1.0);
        assert_eq!(chi2_sf(-3.0, 5).unwrap(), 1.0);
    }

    #[test]
    fn normal_two_sided_reference_values() {
        assert_close(normal_two_sided_p(0.0), 1.0, 1e-12, "z=0");
        assert_close(normal_two_sided_p(0.8), 0.423_710_797_166_793_38, 1e-11, "z=0.8");
        assert_close(normal_two_sided_p(1.2), 0.230_139_340_443_416_61, 1e-11, "z=1.2");
        assert_close(normal_two_sided_p(2.4), 0.016_395_071_849_192_276, 1e-11, "z=2.4");
        assert_close(normal_two_sided_p(-2.4), 0.016_395_071_849_192_276, 1e-11, "z=-2.4");
        assert_close(normal_two_sided_p(2.7), 0.006_933_947_606_081_336_4, 1e-11, "z=2.7");
        assert_close(
            normal_two_sided_p(1.959_963_984_540_054),
            0.05,
            1e-10,
            "z at 5%",
        );
        assert_close(
            normal_two_sided_p(2.575_829_303_548_900_4),
            0.01,
            1e-10,
            "z at 1%",
        );
        let far_tail = normal_two_sided_p(6.6);
        assert!(
            (far_tail / 4.111_577_818_799_048_3e-11 - 1.0).abs() < 1e-8,
            "z=6.6 relative: {far_tail}"
        );
    }

    fn two_by_two() -> ScoreMatrix {
        ScoreMatrix::new(
            vec!["A".into(), "B".into()],
            vec!["d1".into(), "d2".into()],
            vec![vec![1.0, 1.0], vec![2.0, 2.0]],
        )
        .unwrap()
    }

    #[test]
    fn aligned_ranks_hand_example() {
        let ranks = aligned_ranks(&two_by_two()).unwrap();
        // aligned values: A = [-0.5, -0.5], B = [0.5, 0.5];
        // descending: the two 0.5s share ranks 1-2, the two -0.5s share 3-4
        assert_eq!(ranks, vec![vec![3.5, 3.5], vec![1.5, 1.5]]);
    }

    #[test]
    fn far_statistic_hand_example() {
        let far = far_test(&two_by_two()).unwrap();
        assert_close(far.statistic, 1.6, 1e-12, "T");
        assert_eq!(far.df, 1);
        assert!(!far.degenerate);
        assert_close(far.p_value, 0.205_903_210_732_068_3, 1e-11, "p");
        assert_eq!(far.mean_ranks[0].0, "A");
        assert_close(far.mean_ranks[0].1, 3.5, 1e-12, "A mean rank");
        assert_close(far.mean_ranks[1].1, 1.5, 1e-12, "B mean rank");
    }

    #[test]
    fn constant_matrix_is_a_natural_zero() {
        let matrix = ScoreMatrix::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec!["d1".into(), "d2".into()],
            vec![vec![5.0, 5.0], vec![5.0, 5.0], vec![5.0, 5.0]],
        )
        .unwrap();
        let far = far_test(&matrix).unwrap();
        assert_eq!(far.statistic, 0.0);
        assert_eq!(far.p_value, 1.0);
        assert!(!far.degenerate);
    }

    #[test]
    fn tied_single_dataset_stays_well_defined() {
        // The harshest concentration of rank mass: one dataset, fully tied.
        // The denominator formula uses the no-ties sum of squared ranks, so
        // it stays strictly positive and the statistic is a clean zero.
        let matrix = ScoreMatrix::new(
            vec!["A".into(), "B".into()],
            vec!["d1".into()],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let far = far_test(&matrix).unwrap();
        assert!(!far.degenerate);
        assert_eq!(far.statistic, 0.0);
        assert_eq!(far.p_value, 1.0);
    }

    #[test]
    fn ranking_averages_ties() {
        let ranks = rank_descending_avg_ties(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(ranks, vec![1.5, 4.0, 1.5, 3.0]);
        let all_tied = rank_descending_avg_ties(&[7.0; 5]);
        assert!(all_tied.iter().all(|&r| r == 3.0));
    }

    #[test]
    fn li_adjustment_hand_values() {
        let apvs = li_adjusted_p(&[0.04, 0.5]);
        assert_close(apvs[0], 0.074_074_074_074_074_07, 1e-12, "apv[0]");
        assert_close(apvs[1], 0.5, 1e-12, "apv[1]");
        // equal raw ps adjust to themselves
        let same = li_adjusted_p(&[0.2, 0.2, 0.2]);
        for apv in same {
            assert_close(apv, 0.2, 1e-12, "equal family");
        }
    }

    #[test]
    fn posthoc_control_and_decision() {
        let matrix = ScoreMatrix::new(
            vec!["weak".into(), "strong".into(), "middle".into()],
            (0..5).map(|i| format!("d{i}")).collect(),
            vec![
                vec![1.0, 1.1, 0.9, 1.2, 1.0],
                vec![9.0, 9.2, 8.8, 9.1, 9.0],
                vec![5.0, 5.2, 4.9, 5.1, 5.0],
            ],
        )
        .unwrap();
        let report = rank_significance(&matrix, 0.05).unwrap();
        assert_eq!(report.posthoc.control, "strong");
        assert_eq!(report.posthoc.comparisons.len(), 2);
        // sorted by ascending mean rank: middle first, weak last
        assert_eq!(report.posthoc.comparisons[0].model, "middle");
        assert_eq!(report.posthoc.comparisons[1].model, "weak");
        assert!(report.posthoc.comparisons[1].rejected, "weak vs strong");
        for c in &report.posthoc.comparisons {
            assert!(c.z > 0.0);
            assert!((0.0..=1.0).contains(&c.apv));
        }
    }

    #[test]
    fn posthoc_rejects_bad_alpha() {
        let far = far_test(&two_by_two()).unwrap();
        assert!(li_posthoc(&far, 1.5).is_err());
        assert!(li_posthoc(&far, -0.1).is_err());
    }

    #[test]
    fn report_rendering_marks_the_control() {
        let matrix = ScoreMatrix::new(
            vec!["A".into(), "B".into(), "C".into()],
            (0..4).map(|i| format!("d{i}")).collect(),
            vec![
                vec![3.0, 3.1, 2.9, 3.0],
                vec![1.0, 1.2, 0.8, 1.1],
                vec![2.0, 2.1, 1.9, 2.2],
            ],
        )
        .unwrap();
        let report = rank_significance(&matrix, 0.05).unwrap();
        let text = render_rank_report(&report);
        let control_line = text
            .lines()
            .find(|l| l.starts_with(&report.posthoc.control))
            .unwrap();
        assert!(control_line.contains("---"));
        assert!(text.contains("model"));
        assert!(text.contains("FAR"));
        assert!(text.contains("APV"));
        assert!(text.contains("H0"));
    }

    #[test]
    fn matrix_validation_errors() {
        assert!(matches!(
            ScoreMatrix::new(vec!["A".into()], vec!["d".into()], vec![vec![1.0]]),
            Err(StatsError::TooFewModels(1))
        ));
        assert!(matches!(
            ScoreMatrix::new(vec!["A".into(), "B".into()], vec![], vec![vec![], vec![]]),
            Err(StatsError::NoDatasets)
        ));
        assert!(matches!(
            ScoreMatrix::new(
                vec!["A".into(), "A".into()],
                vec!["d".into()],
                vec![vec![1.0], vec![2.0]]
            ),
            Err(StatsError::DuplicateModel(_))
        ));
        assert!(matches!(
            ScoreMatrix::new(
                vec!["A".into(), "B".into()],
                vec!["d".into()],
                vec![vec![1.0], vec![f64::NAN]]
            ),
            Err(StatsError::NonFinite { .. })
        ));
        assert!(matches!(
            ScoreMatrix::new(
                vec!["A".into(), "B".into()],
                vec!["d".into()],
                vec![vec![1.0], vec![2.0, 3.0]]
            ),
            Err(StatsError::RaggedRow { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let matrix = ScoreMatrix::new(
            vec!["E5".into(), "mGTE".into()],
            vec!["civics".into(), "marco".into()],
            vec![vec![92.62, 98.2], vec![93.36, 99.13]],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        matrix.to_csv(&path).unwrap();
        let loaded = ScoreMatrix::from_csv(&path).unwrap();
        assert_eq!(loaded, matrix);
    }

    #[test]
    fn csv_rejects_unparseable_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "model,d1\nA,1.0\nB,oops\n").unwrap();
        let err = ScoreMatrix::from_csv(&path).unwrap_err();
        assert!(err.to_string().contains("oops"), "{err}");
    }

    #[test]
    fn jsonl_cells_require_a_complete_cross_product() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"model\":\"A\",\"dataset\":\"d1\",\"score\":1.0}\n",
                "{\"model\":\"A\",\"dataset\":\"d2\",\"score\":2.0}\n",
                "{\"model\":\"B\",\"dataset\":\"d1\",\"score\":3.0}\n",
            ),
        )
        .unwrap();
        let err = ScoreMatrix::from_jsonl(&path).unwrap_err();
        match &err {
            StatsError::MissingCells(cells) => {
                assert_eq!(cells, &vec![("B".to_string(), "d2".to_string())]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("(B, d2)"), "{err}");

        std::fs::write(
            &path,
            concat!(
                "{\"model\":\"A\",\"dataset\":\"d1\",\"score\":1.0}\n",
                "{\"model\":\"A\",\"dataset\":\"d1\",\"score\":9.0}\n",
            ),
        )
        .unwrap();
        assert!(matches!(
            ScoreMatrix::from_jsonl(&path),
            Err(StatsError::DuplicateCell { .. })
        ));
    }

    #[test]
    fn jsonl_happy_path_preserves_first_seen_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"model\":\"Z\",\"dataset\":\"later\",\"score\":1.0}\n",
                "{\"model\":\"A\",\"dataset\":\"early\",\"score\":2.0}\n",
                "{\"model\":\"Z\",\"dataset\":\"early\",\"score\":3.0}\n",
                "{\"model\":\"A\",\"dataset\":\"later\",\"score\":4.0}\n",
            ),
        )
        .unwrap();
        let matrix = ScoreMatrix::from_jsonl(&path).unwrap();
        assert_eq!(matrix.models, vec!["Z", "A"]);
        assert_eq!(matrix.datasets, vec!["later", "early"]);
        assert_eq!(matrix.scores, vec![vec![1.0, 3.0], vec![4.0, 2.0]]);
    }

    proptest! {
        /// Joint ranks over the aligned table always sum to
        /// kn (kn + 1) / 2, ties or not.
        #[test]
        fn rank_sum_is_invariant(
            k in 2usize..7,
            n in 1usize..6,
            raw in proptest::collection::vec(0u32..1000, 42),
        ) {
            let scores: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..n).map(|j| raw[(i * n + j) % raw.len()] as f64 / 10.0).collect())
                .collect();
            let matrix = ScoreMatrix::new(
                (0..k).map(|i| format!("m{i}")).collect(),
                (0..n).map(|j| format!("d{j}")).collect(),
                scores,
            ).unwrap();
            let ranks = aligned_ranks(&matrix).unwrap();
            let total: f64 = ranks.iter().flatten().sum();
            let kn = (k * n) as f64;
            prop_assert!((total - kn * (kn + 1.0) / 2.0).abs() < 1e-9);
        }

        /// Shifting an entire dataset column never changes the aligned
        /// values' ordering, so decisions based on the ranks are unmoved.
        #[test]
        fn dataset_shift_leaves_mean_ranks_unchanged(
            shift in -100.0f64..100.0,
            raw in proptest::collection::vec(-1000i32..1000, 12),
        ) {
            let (k, n) = (4usize, 3usize);
            let base: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..n).map(|j| raw[i * n + j] as f64).collect())
                .collect();
            let mut shifted = base.clone();
            for row in &mut shifted {
                row[1] += shift;
            }
            let models: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
            let datasets: Vec<String> = (0..n).map(|j| format!("d{j}")).collect();
            let a = far_test(&ScoreMatrix::new(models.clone(), datasets.clone(), base).unwrap()).unwrap();
            let b = far_test(&ScoreMatrix::new(models, datasets, shifted).unwrap()).unwrap();
            for (x, y) in a.mean_ranks.iter().zip(&b.mean_ranks) {
                prop_assert!((x.1 - y.1).abs() < 1e-9);
            }
        }
    }
}
