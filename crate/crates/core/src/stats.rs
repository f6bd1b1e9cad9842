//! Pearson and partial correlation with Student-t significance, and the
//! score table that links model pairs to external evaluations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_columns, residualize};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult<T> {
    pub r: T,
    pub p_two_sided: T,
    pub n: usize,
    pub df: usize,
    pub covariates: Vec<String>,
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::invalid("df", format!("degrees of freedom must be positive, got {df}")));
    }
    if t.is_nan() {
        return Err(Error::invalid("t", "NaN statistic"));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(statrs::function::beta::beta_reg(0.5 * df, 0.5, x).clamp(0.0, 1.0))
}

/// p-value of a correlation coefficient with `df` residual degrees of freedom.
pub fn p_from_r(r: f64, df: usize) -> Result<f64> {
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return t_two_sided_p(f64::INFINITY, df as f64);
    }
    t_two_sided_p(r * (df as f64 / denom).sqrt(), df as f64)
}

fn centered_sums<T: Real>(x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> (T, T, T) {
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    (sxx, syy, sxy)
}

fn check_vectors<T: Real>(x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("x has {} values, y has {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::invalid("n", format!("need at least 3 observations, got {}", x.len())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("values", "non-finite observation"));
    }
    Ok(())
}

fn correlation_of<T: Real>(x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<T> {
    let (sxx, syy, sxy) = centered_sums(x, y);
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one()))
}

/// Product-moment correlation with a t-test on `n - 2` degrees of freedom.
pub fn pearson<T: Real>(x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Result<CorrelationResult<T>> {
    check_vectors(x, y)?;
    let r = correlation_of(x, y)?;
    let df = x.len() - 2;
    Ok(CorrelationResult {
        r,
        p_two_sided: T::of(p_from_r(r.to_f64_lossy(), df)?),
        n: x.len(),
        df,
        covariates: Vec::new(),
    })
}

fn design_basis<T: Real>(z: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let n = z.nrows();
    let mut design = Array2::ones((n, z.ncols() + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(&z);
    orthonormal_columns(design.view())
}

/// Correlation of the residuals of `x` and `y` after least-squares
/// regression on `[1 | Z]`; the t-test uses `n - 2 - k` degrees of freedom.
pub fn partial_correlation<T: Real>(
    x: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    z: ArrayView2<'_, T>,
    names: &[String],
) -> Result<CorrelationResult<T>> {
    if z.ncols() == 0 {
        let mut res = pearson(x, y)?;
        res.covariates = names.to_vec();
        return Ok(res);
    }
    check_vectors(x, y)?;
    let (n, k) = z.dim();
    if n != x.len() {
        return Err(Error::Shape(format!("covariates have {n} rows, x has {}", x.len())));
    }
    if n <= k + 2 {
        return Err(Error::invalid("n", format!("need more than {} observations for {k} covariates", k + 2)));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("covariates", "non-finite value"));
    }
    let q = design_basis(z)?;
    let rx = residualize(q.view(), x);
    let ry = residualize(q.view(), y);
    let tiny = T::of(1e-24);
    let (sxx0, syy0, _) = centered_sums(x, y);
    let ssx: T = rx.iter().map(|&v| v * v).sum();
    let ssy: T = ry.iter().map(|&v| v * v).sum();
    if ssx <= tiny * sxx0 || ssy <= tiny * syy0 {
        return Err(Error::UndefinedCorrelation(
            "covariates explain one variable completely; residual is zero".into(),
        ));
    }
    let r = correlation_of(rx.view(), ry.view())?;
    let df = n - 2 - k;
    Ok(CorrelationResult {
        r,
        p_two_sided: T::of(p_from_r(r.to_f64_lossy(), df)?),
        n,
        df,
        covariates: names.to_vec(),
    })
}

/// Permutation p-value: share of shuffles of `y` whose |r| reaches the
/// observed one (after covariate residualisation when `z` has columns).
pub fn permutation_p<T: Real>(
    x: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    z: ArrayView2<'_, T>,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    if permutations == 0 {
        return Err(Error::invalid("permutations", "must be positive"));
    }
    check_vectors(x, y)?;
    let (rx, ry) = if z.ncols() == 0 {
        (x.to_owned(), y.to_owned())
    } else {
        let q = design_basis(z)?;
        (
            residualize(q.view(), x),
            residualize(q.view(), y),
        )
    };
    let observed = correlation_of(rx.view(), ry.view())?.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<T> = ry.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        let r = correlation_of(rx.view(), Array1::from(perm.clone()).view())?.abs();
        if r >= observed - T::of(1e-12) {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (permutations + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    #[serde(rename = "within_family_1")]
    WithinFamily1,
    #[serde(rename = "within_family_2")]
    WithinFamily2,
    #[serde(rename = "cross_family")]
    CrossFamily,
}

impl FamilyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyTag::WithinFamily1 => "within_family_1",
            FamilyTag::WithinFamily2 => "within_family_2",
            FamilyTag::CrossFamily => "cross_family",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "within_family_1" => Ok(FamilyTag::WithinFamily1),
            "within_family_2" => Ok(FamilyTag::WithinFamily2),
            "cross_family" => Ok(FamilyTag::CrossFamily),
            other => Err(Error::ScoreTable(format!("unknown family tag {other:?}"))),
        }
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub pair_id: String,
    pub model_a: String,
    pub model_b: String,
    pub family: FamilyTag,
    pub perf_overall: f64,
    pub perf_goal: f64,
    /// Every other column, verbatim.
    pub extra: BTreeMap<String, String>,
}

impl ScoreRow {
    /// Numeric value of a named column (the two composites or any extra).
    pub fn value(&self, column: &str) -> Result<f64> {
        match column {
            "perf_overall" => Ok(self.perf_overall),
            "perf_goal" => Ok(self.perf_goal),
            _ => {
                let raw = self
                    .extra
                    .get(column)
                    .ok_or_else(|| Error::ScoreTable(format!("pair {}: no column {column:?}", self.pair_id)))?;
                let v: f64 = raw.trim().parse().map_err(|_| {
                    Error::ScoreTable(format!("pair {}: column {column:?} value {raw:?} is not numeric", self.pair_id))
                })?;
                if !v.is_finite() {
                    return Err(Error::ScoreTable(format!("pair {}: column {column:?} is not finite", self.pair_id)));
                }
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub columns: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

const REQUIRED: [&str; 6] = ["pair_id", "model_a", "model_b", "family", "perf_overall", "perf_goal"];
const FINITE_IF_PRESENT: [&str; 2] = ["ifeval", "musr"];

impl ScoreTable {
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        for req in REQUIRED {
            if !columns.iter().any(|c| c == req) {
                return Err(Error::ScoreTable(format!("missing column {req:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut cells: BTreeMap<String, String> =
                columns.iter().cloned().zip(rec.iter().map(str::to_string)).collect();
            let mut take = |k: &str| cells.remove(k).unwrap_or_default();
            let pair_id = take("pair_id");
            let model_a = take("model_a");
            let model_b = take("model_b");
            let family = FamilyTag::parse(&take("family"))?;
            let num = |k: &str, raw: String| -> Result<f64> {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| Error::ScoreTable(format!("pair {pair_id}: {k} value {raw:?} is not numeric")))?;
                if !v.is_finite() {
                    return Err(Error::ScoreTable(format!("pair {pair_id}: {k} is not finite")));
                }
                Ok(v)
            };
            let perf_overall = num("perf_overall", take("perf_overall"))?;
            let perf_goal = num("perf_goal", take("perf_goal"))?;
            if pair_id.is_empty() {
                return Err(Error::ScoreTable("empty pair_id".into()));
            }
            if !seen.insert(pair_id.clone()) {
                return Err(Error::ScoreTable(format!("duplicate pair_id {pair_id:?}")));
            }
            let row = ScoreRow {
                pair_id,
                model_a,
                model_b,
                family,
                perf_overall,
                perf_goal,
                extra: cells,
            };
            for col in FINITE_IF_PRESENT {
                if row.extra.contains_key(col) {
                    row.value(col)?;
                }
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn get(&self, pair_id: &str) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.pair_id == pair_id)
    }
}

/// Social-performance composites correlated against synchrony.
pub const COMPOSITES: [&str; 2] = ["perf_overall", "perf_goal"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCorrelation {
    /// A family tag, or `overall` for all pairs together.
    pub family: String,
    pub composite: String,
    pub pair_ids: Vec<String>,
    pub pearson: CorrelationResult<f64>,
    pub partial: Option<CorrelationResult<f64>>,
    pub permutation_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub results: Vec<FamilyCorrelation>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationOptions {
    pub permutations: usize,
    pub seed: u64,
}

/// Pearson (and partial, when covariates are named) correlation between
/// synchrony and each performance composite, per family and overall.
pub fn correlate_by_family(
    sync: &BTreeMap<String, f64>,
    table: &ScoreTable,
    covariates: &[String],
    permutations: Option<PermutationOptions>,
) -> Result<FamilyReport> {
    for id in sync.keys() {
        if table.get(id).is_none() {
            return Err(Error::ScoreTable(format!("synchrony pair {id:?} is not in the score table")));
        }
    }
    let mut warnings = Vec::new();
    let rows: Vec<&ScoreRow> = table.rows.iter().filter(|r| sync.contains_key(&r.pair_id)).collect();
    let skipped = table.rows.len() - rows.len();
    if skipped > 0 {
        warnings.push(format!("{skipped} score-table rows have no synchrony value and were ignored"));
    }

    let mut groups: Vec<(String, Vec<&ScoreRow>)> = Vec::new();
    let mut by_family: BTreeMap<FamilyTag, Vec<&ScoreRow>> = BTreeMap::new();
    for r in &rows {
        by_family.entry(r.family).or_default().push(r);
    }
    for (tag, members) in by_family {
        groups.push((tag.to_string(), members));
    }
    groups.push(("overall".to_string(), rows));

    let mut results = Vec::new();
    for (name, members) in groups {
        if members.len() < 3 {
            let msg = format!("family {name} has {} pairs (< 3) and was skipped", members.len());
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let ids: Vec<String> = members.iter().map(|r| r.pair_id.clone()).collect();
        let x = Array1::from_iter(members.iter().map(|r| sync[&r.pair_id]));
        let mut z = Array2::zeros((members.len(), covariates.len()));
        for (i, r) in members.iter().enumerate() {
            for (j, c) in covariates.iter().enumerate() {
                z[[i, j]] = r.value(c)?;
            }
        }
        for composite in COMPOSITES {
            let y = Array1::from_iter(members.iter().map(|r| r.value(composite).expect("composite column")));
            let p = match pearson(x.view(), y.view()) {
                Ok(p) => p,
                Err(e @ Error::UndefinedCorrelation(_)) => {
                    let msg = format!("family {name}, {composite}: {e}");
                    log::warn!("{msg}");
                    warnings.push(msg);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let partial = if covariates.is_empty() {
                None
            } else {
                match partial_correlation(x.view(), y.view(), z.view(), covariates) {
                    Ok(r) => Some(r),
                    Err(e) if matches!(e.kind(), crate::error::ErrorKind::Numeric | crate::error::ErrorKind::Validation) => {
                        let msg = format!("family {name}, {composite}: partial correlation unavailable: {e}");
                        log::warn!("{msg}");
                        warnings.push(msg);
                        None
                    }
                    Err(e) => return Err(e),
                }
            };
            let perm = match permutations {
                Some(o) => Some(permutation_p(x.view(), y.view(), z.view(), o.permutations, o.seed)?),
                None => None,
            };
            results.push(FamilyCorrelation {
                family: name.clone(),
                composite: composite.to_string(),
                pair_ids: ids.clone(),
                pearson: p,
                partial,
                permutation_p: perm,
            });
        }
    }
    if results.is_empty() {
        return Err(Error::UndefinedCorrelation(format!(
            "no family yielded a defined correlation ({})",
            warnings.join("; ")
        )));
    }
    Ok(FamilyReport { results, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    #[test]
    fn pearson_hand_cases() {
        let x: Array1<f64> = array![1.0, 2.0, 3.0];
        assert!((pearson(x.view(), x.view()).unwrap().r - 1.0).abs() < 1e-15);
        let neg = -&x;
        assert!((pearson(x.view(), neg.view()).unwrap().r + 1.0).abs() < 1e-15);
        let y = array![1.0, 2.0, 4.0];
        let r = pearson(x.view(), y.view()).unwrap();
        assert!((r.r - 0.9819805060619657).abs() < 1e-12);
        assert_eq!(r.df, 1);
        let c = array![2.0, 2.0, 2.0];
        assert!(matches!(pearson(x.view(), c.view()), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(array![1.0, 2.0].view(), array![1.0, 3.0].view()).is_err());
    }

    #[test]
    fn p_values() {
        // df = 1: t-distribution is Cauchy, P(|T| > 1) = 0.5
        assert!((t_two_sided_p(1.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(t_two_sided_p(0.0, 5.0).unwrap(), 1.0);
        assert_eq!(p_from_r(1.0, 4).unwrap(), 0.0);
        assert!(t_two_sided_p(1.0, 0.0).is_err());
    }

    #[test]
    fn partial_with_forced_failure() {
        let x = array![1.0, 2.0, 4.0, 3.0, 7.0];
        let y = array![2.0, 1.0, 5.0, 3.0, 6.0];
        let z = x.clone().insert_axis(Axis(1));
        assert!(matches!(
            partial_correlation(x.view(), y.view(), z.view(), &["x".into()]),
            Err(Error::UndefinedCorrelation(_))
        ));
        let empty = Array2::<f64>::zeros((5, 0));
        let a = partial_correlation(x.view(), y.view(), empty.view(), &[]).unwrap();
        assert_eq!(a, pearson(x.view(), y.view()).unwrap());
    }

    #[test]
    fn partial_orthogonal_covariate_is_identity() {
        let x: Array1<f64> = array![1.0, -1.0, 1.0, -1.0];
        let y = array![1.0, -1.0, -1.0, 1.0];
        let z = array![[1.0], [1.0], [-1.0], [-1.0]];
        let p = partial_correlation(x.view(), y.view(), z.view(), &["z".into()]).unwrap();
        let plain = pearson(x.view(), y.view()).unwrap();
        assert!((p.r - plain.r).abs() < 1e-14);
        assert_eq!(p.df, 1);
    }

    const CSV: &str = "pair_id,model_a,model_b,family,perf_overall,perf_goal,ifeval,musr,note\n\
        p1,a,b,within_family_1,3.0,6.0,0.5,0.4,x\n\
        p2,a,c,within_family_1,3.5,6.5,0.6,0.5,y\n\
        p3,b,c,within_family_1,2.0,5.0,0.4,0.45,z\n\
        p4,a,d,cross_family,2.2,5.5,0.55,0.6,w\n";

    #[test]
    fn table_parsing_and_family_skip() {
        let t = ScoreTable::from_reader(CSV.as_bytes()).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[0].extra["note"], "x");
        assert_eq!(t.rows[1].value("ifeval").unwrap(), 0.6);
        let sync: BTreeMap<String, f64> =
            [("p1", 0.3), ("p2", 0.4), ("p3", 0.1), ("p4", 0.2)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let rep = correlate_by_family(&sync, &t, &[], None).unwrap();
        let fams: BTreeSet<&str> = rep.results.iter().map(|r| r.family.as_str()).collect();
        assert_eq!(fams, ["overall", "within_family_1"].into_iter().collect());
        assert_eq!(rep.results.len(), 4);
        assert!(rep.warnings.iter().any(|w| w.contains("cross_family")));
    }

    #[test]
    fn table_errors() {
        let dup = "pair_id,model_a,model_b,family,perf_overall,perf_goal\np,a,b,cross_family,1,2\np,a,b,cross_family,1,2\n";
        assert!(matches!(ScoreTable::from_reader(dup.as_bytes()), Err(Error::ScoreTable(_))));
        let missing = "pair_id,model_a,family,perf_overall,perf_goal\n";
        assert!(ScoreTable::from_reader(missing.as_bytes()).is_err());
        let nan = "pair_id,model_a,model_b,family,perf_overall,perf_goal\np,a,b,cross_family,NaN,2\n";
        assert!(ScoreTable::from_reader(nan.as_bytes()).is_err());
        let t = ScoreTable::from_reader(CSV.as_bytes()).unwrap();
        let sync: BTreeMap<String, f64> = [("zz".to_string(), 0.1)].into_iter().collect();
        assert!(correlate_by_family(&sync, &t, &[], None).is_err());
        let flat: BTreeMap<String, f64> = ["p1", "p2", "p3", "p4"].iter().map(|k| (k.to_string(), 0.3)).collect();
        assert!(matches!(
            correlate_by_family(&flat, &t, &[], None),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn permutation_p_in_range() {
        let x = array![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = array![1.1, 2.3, 2.9, 4.2, 5.1, 5.8];
        let none = Array2::<f64>::zeros((6, 0));
        let p = permutation_p(x.view(), y.view(), none.view(), 999, 7).unwrap();
        assert!(p > 0.0 && p < 0.05);
    }
}
