use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{softmax_into, Scalar};

const PRIOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub max_depth: usize,
    /// Minimum hessian mass per child.
    pub min_child_weight: f64,
    /// Minimum gain for a split.
    pub gamma: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub learning_rate: f64,
    pub n_rounds: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_child_weight: 1.0,
            gamma: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            learning_rate: 0.3,
            n_rounds: 100,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.subsample) || !unit(self.colsample_bytree) {
            return Err(Error::config("subsample and colsample_bytree must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.min_child_weight >= 0.0) || !(self.gamma >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::config("min_child_weight, gamma and lambda must be non-negative"));
        }
        Ok(())
    }
}

/// Categorical feature matrix; code 0 of every column is `[NA]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalMatrix {
    pub cardinalities: Vec<usize>,
    pub rows: Vec<Vec<u32>>,
}

impl CategoricalMatrix {
    pub fn new(cardinalities: Vec<usize>, rows: Vec<Vec<u32>>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::config("feature set is empty"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cardinalities.len() {
                return Err(Error::Shape { expected: cardinalities.len(), got: row.len() });
            }
            if let Some(f) = row.iter().zip(&cardinalities).position(|(&v, &c)| v as usize >= c) {
                return Err(Error::Integrity(format!("row {i}: code {} out of range for feature {f}", row[f])));
            }
        }
        Ok(Self { cardinalities, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.cardinalities.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node<T> {
    Leaf {
        value: T,
        cover: T,
    },
    /// Rows whose `feature` equals `category` go to `yes`, all others to `no`.
    Split {
        feature: usize,
        category: u32,
        gain: T,
        cover: T,
        yes: Box<Node<T>>,
        no: Box<Node<T>>,
    },
}

impl<T: Scalar> Node<T> {
    pub fn leaf_value(&self, row: &[u32]) -> T {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, category, yes, no, .. } => {
                    node = if row[*feature] == *category { yes } else { no };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { yes, no, .. } => 1 + yes.depth().max(no.depth()),
        }
    }

    /// Visits every node depth first, `yes` branch before `no`.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node<T>)) {
        f(self);
        if let Node::Split { yes, no, .. } = self {
            yes.walk(f);
            no.walk(f);
        }
    }

    pub fn n_splits(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |node| n += matches!(node, Node::Split { .. }) as usize);
        n
    }
}

/// Boosted per-class regression trees under a softmax link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble<T> {
    pub params: BoostParams,
    pub n_classes: usize,
    pub cardinalities: Vec<usize>,
    pub base_score: Vec<T>,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Node<T>>>,
    /// Sum of split gains per feature.
    pub gain_totals: Vec<f64>,
    /// Weighted training loss before the first round and after each round.
    pub train_loss: Vec<f64>,
}

/// Distinct (feature row, label) combinations with summed weights. Boosting only
/// ever sees these groups, so a row repeated `k` times and a row weighted `k` are
/// indistinguishable.
struct Groups<T> {
    rows: Vec<Vec<u32>>,
    labels: Vec<usize>,
    weight: Vec<T>,
    of_row: Vec<usize>,
}

fn group_rows<T: Scalar>(x: &CategoricalMatrix, labels: &[usize], weights: &[T]) -> Groups<T> {
    let mut index: HashMap<(&[u32], usize), usize> = HashMap::new();
    let mut g = Groups { rows: Vec::new(), labels: Vec::new(), weight: Vec::new(), of_row: Vec::with_capacity(labels.len()) };
    for (i, (row, &y)) in x.rows.iter().zip(labels).enumerate() {
        let id = *index.entry((row.as_slice(), y)).or_insert_with(|| {
            g.rows.push(row.clone());
            g.labels.push(y);
            g.weight.push(T::zero());
            g.rows.len() - 1
        });
        g.weight[id] += weights[i];
        g.of_row.push(id);
    }
    g
}

struct Builder<'a, T> {
    rows: &'a [Vec<u32>],
    grad: &'a [T],
    hess: &'a [T],
    features: &'a [usize],
    cardinalities: &'a [usize],
    params: &'a BoostParams,
    gains: &'a mut [f64],
}

impl<T: Scalar> Builder<'_, T> {
    fn score(&self, g: T, h: T) -> T {
        let d = h + T::of(self.params.lambda);
        if d > T::zero() {
            g * g / d
        } else {
            T::zero()
        }
    }

    fn leaf(&self, g: T, h: T) -> Node<T> {
        let d = h + T::of(self.params.lambda);
        let value = if d > T::zero() { -(T::of(self.params.learning_rate) * g / d) } else { T::zero() };
        Node::Leaf { value, cover: h }
    }

    fn build(&mut self, members: Vec<usize>, depth: usize) -> Node<T> {
        let mut g = T::zero();
        let mut h = T::zero();
        for &i in &members {
            g += self.grad[i];
            h += self.hess[i];
        }
        if depth >= self.params.max_depth || members.len() < 2 {
            return self.leaf(g, h);
        }
        let mcw = T::of(self.params.min_child_weight);
        let gamma = T::of(self.params.gamma);
        let parent = self.score(g, h);
        let mut best: Option<(T, T, usize, u32)> = None;
        for &f in self.features {
            let card = self.cardinalities[f];
            let mut cg = vec![T::zero(); card];
            let mut ch = vec![T::zero(); card];
            let mut cn = vec![0usize; card];
            for &i in &members {
                let c = self.rows[i][f] as usize;
                cg[c] += self.grad[i];
                ch[c] += self.hess[i];
                cn[c] += 1;
            }
            for c in 0..card {
                if cn[c] == 0 || cn[c] == members.len() {
                    continue;
                }
                let (gl, hl) = (cg[c], ch[c]);
                let (gr, hr) = (g - gl, h - hl);
                if hl < mcw || hr < mcw {
                    continue;
                }
                let raw = (T::of(0.5) * (self.score(gl, hl) + self.score(gr, hr) - parent)).max(T::zero());
                let net = raw - gamma;
                if net >= T::zero() && best.is_none_or(|(b, ..)| net > b) {
                    best = Some((net, raw, f, c as u32));
                }
            }
        }
        let Some((_, raw, feature, category)) = best else {
            return self.leaf(g, h);
        };
        self.gains[feature] += raw.as_f64();
        let (yes, no): (Vec<usize>, Vec<usize>) = members.into_iter().partition(|&i| self.rows[i][feature] == category);
        let yes = Box::new(self.build(yes, depth + 1));
        let no = Box::new(self.build(no, depth + 1));
        Node::Split { feature, category, gain: raw, cover: h, yes, no }
    }
}

fn weighted_loss<T: Scalar>(margins: &[Vec<T>], labels: &[usize], weight: &[T]) -> f64 {
    let mut p = vec![T::zero(); margins.first().map_or(0, Vec::len)];
    let mut total = 0.0;
    for ((m, &y), &w) in margins.iter().zip(labels).zip(weight) {
        softmax_into(m, &mut p);
        total -= w.as_f64() * p[y].max(T::prob_floor()).as_f64().ln();
    }
    total
}

/// Fits `n_rounds x n_classes` trees to the softmax loss with second-order gain.
pub fn fit<T: Scalar>(
    x: &CategoricalMatrix,
    labels: &[usize],
    n_classes: usize,
    params: &BoostParams,
    weights: Option<&[T]>,
) -> Result<TreeEnsemble<T>> {
    params.validate()?;
    if x.n_features() == 0 {
        return Err(Error::config("feature set is empty"));
    }
    if labels.len() != x.n_rows() {
        return Err(Error::Shape { expected: x.n_rows(), got: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::config("no training rows"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Integrity(format!("label {bad} outside [0, {n_classes})")));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::DegenerateProblem(format!("all training labels are class {}", labels[0])));
    }
    let unit;
    let weights = match weights {
        Some(w) => {
            if w.len() != labels.len() {
                return Err(Error::Shape { expected: labels.len(), got: w.len() });
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
                return Err(Error::config("sample weights must be finite and non-negative"));
            }
            w
        }
        None => {
            unit = vec![T::one(); labels.len()];
            &unit
        }
    };

    let groups = group_rows(x, labels, weights);
    let n_groups = groups.rows.len();
    let mut class_mass = vec![T::zero(); n_classes];
    for (&y, &w) in groups.labels.iter().zip(&groups.weight) {
        class_mass[y] += w;
    }
    let total: T = class_mass.iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::config("sample weights sum to zero"));
    }
    let base_score: Vec<T> = class_mass.iter().map(|&m| (m / total).max(T::of(PRIOR_FLOOR)).ln()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut margins = vec![base_score.clone(); n_groups];
    let mut gains = vec![0.0; x.n_features()];
    let mut train_loss = vec![weighted_loss(&margins, &groups.labels, &groups.weight)];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut probs = vec![vec![T::zero(); n_classes]; n_groups];
    let n_cols = ((params.colsample_bytree * x.n_features() as f64).round() as usize).clamp(1, x.n_features());

    for _ in 0..params.n_rounds {
        let round_weight: Vec<T> = if params.subsample < 1.0 {
            let mut w = vec![T::zero(); n_groups];
            for (i, &g) in groups.of_row.iter().enumerate() {
                if rng.random::<f64>() < params.subsample {
                    w[g] += weights[i];
                }
            }
            w
        } else {
            groups.weight.clone()
        };
        let features: Vec<usize> = if n_cols < x.n_features() {
            let mut f = rand::seq::index::sample(&mut rng, x.n_features(), n_cols).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..x.n_features()).collect()
        };
        for (m, p) in margins.iter().zip(probs.iter_mut()) {
            softmax_into(m, p);
        }
        let members: Vec<usize> = (0..n_groups).filter(|&g| round_weight[g] > T::zero()).collect();
        let mut round = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            let mut grad = vec![T::zero(); n_groups];
            let mut hess = vec![T::zero(); n_groups];
            for &g in &members {
                let p = probs[g][k];
                let y = if groups.labels[g] == k { T::one() } else { T::zero() };
                grad[g] = round_weight[g] * (p - y);
                hess[g] = round_weight[g] * p * (T::one() - p);
            }
            let mut builder = Builder {
                rows: &groups.rows,
                grad: &grad,
                hess: &hess,
                features: &features,
                cardinalities: &x.cardinalities,
                params,
                gains: &mut gains,
            };
            round.push(builder.build(members.clone(), 0));
        }
        for (row, m) in groups.rows.iter().zip(margins.iter_mut()) {
            for (k, tree) in round.iter().enumerate() {
                m[k] += tree.leaf_value(row);
            }
        }
        train_loss.push(weighted_loss(&margins, &groups.labels, &groups.weight));
        trees.push(round);
    }
    Ok(TreeEnsemble { params: params.clone(), n_classes, cardinalities: x.cardinalities.clone(), base_score, trees, gain_totals: gains, train_loss })
}

/// Normalized per-feature gain shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub shares: Vec<f64>,
    /// Set when the ensemble never gained from a split; shares are then all zero.
    pub degenerate: bool,
}

impl FeatureImportance {
    /// Feature indices by descending share, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.shares.len()).collect();
        idx.sort_by(|&a, &b| self.shares[b].total_cmp(&self.shares[a]).then(a.cmp(&b)));
        idx
    }
}

impl<T: Scalar> TreeEnsemble<T> {
    pub fn n_features(&self) -> usize {
        self.cardinalities.len()
    }

    fn sanitize(&self, row: &[u32]) -> Result<Vec<u32>> {
        if row.len() != self.n_features() {
            return Err(Error::Shape { expected: self.n_features(), got: row.len() });
        }
        Ok(row.iter().zip(&self.cardinalities).map(|(&v, &c)| if (v as usize) < c { v } else { 0 }).collect())
    }

    /// Raw scores; codes beyond a feature's training vocabulary count as `[NA]`.
    pub fn predict_margin(&self, row: &[u32]) -> Result<Vec<T>> {
        let row = self.sanitize(row)?;
        let mut m = self.base_score.clone();
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                m[k] += tree.leaf_value(&row);
            }
        }
        Ok(m)
    }

    pub fn predict_proba(&self, row: &[u32]) -> Result<Vec<T>> {
        let m = self.predict_margin(row)?;
        let mut p = vec![T::zero(); m.len()];
        softmax_into(&m, &mut p);
        Ok(p)
    }

    /// Most probable class and its probability; ties go to the lowest index.
    pub fn predict(&self, row: &[u32]) -> Result<(usize, T)> {
        let p = self.predict_proba(row)?;
        let c = crate::scalar::argmax(&p).expect("at least two classes");
        Ok((c, p[c]))
    }

    pub fn n_splits(&self) -> usize {
        self.trees.iter().flatten().map(Node::n_splits).sum()
    }

    pub fn feature_importance(&self) -> FeatureImportance {
        let total: f64 = self.gain_totals.iter().sum();
        if total > 0.0 {
            FeatureImportance { shares: self.gain_totals.iter().map(|g| g / total).collect(), degenerate: false }
        } else {
            log::warn!("ensemble has no informative splits; feature importances are all zero");
            FeatureImportance { shares: vec![0.0; self.gain_totals.len()], degenerate: true }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[u32]], card: &[usize]) -> CategoricalMatrix {
        CategoricalMatrix::new(card.to_vec(), rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn separable() -> (CategoricalMatrix, Vec<usize>) {
        let rows: Vec<&[u32]> = (0..20).map(|i| if i % 2 == 0 { &[1u32][..] } else { &[2u32][..] }).collect();
        (matrix(&rows, &[3]), (0..20).map(|i| i % 2).collect())
    }

    fn accuracy(e: &TreeEnsemble<f64>, x: &CategoricalMatrix, y: &[usize]) -> f64 {
        let ok = x.rows.iter().zip(y).filter(|(r, &t)| e.predict(r).unwrap().0 == t).count();
        ok as f64 / y.len() as f64
    }

    #[test]
    fn separable_feature_reaches_full_accuracy() {
        let (x, y) = separable();
        let p = BoostParams { max_depth: 1, n_rounds: 10, ..BoostParams::default() };
        let e = fit::<f64>(&x, &y, 2, &p, None).unwrap();
        assert_eq!(e.trees.len(), 10);
        assert!(e.trees.iter().all(|r| r.len() == 2));
        assert_eq!(accuracy(&e, &x, &y), 1.0);
        let imp = e.feature_importance();
        assert_eq!(imp.shares, vec![1.0]);
    }

    #[test]
    fn huge_gamma_gives_prior() {
        let x = matrix(&[&[1], &[1], &[2], &[2]], &[3]);
        let y = vec![0, 0, 0, 1];
        let p = BoostParams { gamma: 1e12, n_rounds: 5, ..BoostParams::default() };
        let e = fit::<f64>(&x, &y, 2, &p, None).unwrap();
        assert_eq!(e.n_splits(), 0);
        let prob = e.predict_proba(&[2]).unwrap();
        let base = e.predict_margin(&[1]).unwrap();
        assert!(prob.iter().all(|v| v.is_finite()));
        // leaves shrink towards the prior but never split
        assert_eq!(e.predict_margin(&[2]).unwrap(), base);
        assert!(e.feature_importance().degenerate);
    }

    #[test]
    fn constant_column_never_splits() {
        let x = matrix(&[&[1, 1], &[1, 2], &[1, 1], &[1, 2], &[1, 1], &[1, 2]], &[2, 3]);
        let y = vec![0, 1, 0, 1, 0, 1];
        let p = BoostParams { gamma: 0.1, n_rounds: 5, min_child_weight: 0.0, ..BoostParams::default() };
        let e = fit::<f64>(&x, &y, 2, &p, None).unwrap();
        for t in e.trees.iter().flatten() {
            t.walk(&mut |n| {
                if let Node::Split { feature, .. } = n {
                    assert_eq!(*feature, 1);
                }
            });
        }
    }

    #[test]
    fn zero_rounds_predict_the_prior() {
        let x = matrix(&[&[1], &[1], &[1], &[2]], &[3]);
        let e = fit::<f64>(&x, &[0, 0, 0, 1], 2, &BoostParams { n_rounds: 0, ..BoostParams::default() }, None).unwrap();
        let p = e.predict_proba(&[2]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let x = matrix(&[&[1], &[2]], &[3]);
        assert!(matches!(fit::<f64>(&x, &[1, 1], 2, &BoostParams::default(), None), Err(Error::DegenerateProblem(_))));
        assert!(CategoricalMatrix::new(vec![], vec![]).is_err());
        assert!(CategoricalMatrix::new(vec![2], vec![vec![2]]).is_err());
        let bad = BoostParams { subsample: 0.0, ..BoostParams::default() };
        assert!(matches!(fit::<f64>(&x, &[0, 1], 2, &bad, None), Err(Error::Config(_))));
    }

    #[test]
    fn unseen_code_routes_to_na() {
        let (x, y) = separable();
        let e = fit::<f64>(&x, &y, 2, &BoostParams { n_rounds: 3, ..BoostParams::default() }, None).unwrap();
        assert_eq!(e.predict_proba(&[7]).unwrap(), e.predict_proba(&[0]).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = separable();
        let e = fit::<f64>(&x, &y, 2, &BoostParams { n_rounds: 2, ..BoostParams::default() }, None).unwrap();
        let s = e.to_json().unwrap();
        assert_eq!(TreeEnsemble::<f64>::from_json(&s).unwrap(), e);
        assert!(s.find("\"params\"").unwrap() < s.find("\"trees\"").unwrap());
    }
}
