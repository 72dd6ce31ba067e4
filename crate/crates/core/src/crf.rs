//! Linear-chain CRF.
//!
//! For emissions `e` (T x K), transitions `A` (K x K, row = from tag),
//! start scores `s` and end scores `f`, a tag sequence `y` scores
//!
//! ```text
//! score(y) = s[y0] + sum_i e[i, yi] + sum_{i>0} A[y(i-1), yi] + f[y(T-1)]
//! ```
//!
//! and `p(y) = exp(score(y) - log Z)`, where `log Z` sums over all `K^T`
//! sequences. `log Z` comes from the forward recursion in log space;
//! posteriors and gradients from forward-backward. Decoding is Viterbi with
//! an optional hard constraint mask; forbidden moves are skipped outright
//! rather than scored with a large negative number.

use ndarray::{Array1, Array2, ArrayView2};

use crate::corpus::{Tag, TagSet};
use crate::error::{Error, Result};

/// Transition, start and end scores for `K` tags.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
}

impl CrfParams {
    pub fn zeros(num_tags: usize) -> Self {
        Self {
            transitions: Array2::zeros((num_tags, num_tags)),
            start: Array1::zeros(num_tags),
            end: Array1::zeros(num_tags),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start.len()
    }
}

/// Gradient of the negative log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfGrad {
    pub emissions: Array2<f64>,
    pub params: CrfParams,
}

/// Which starts, transitions and ends are allowed during decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintMask {
    allowed: Array2<bool>,
    allowed_start: Vec<bool>,
    allowed_end: Vec<bool>,
}

impl ConstraintMask {
    pub fn new(allowed: Array2<bool>, allowed_start: Vec<bool>, allowed_end: Vec<bool>) -> Result<Self> {
        let k = allowed_start.len();
        if allowed.dim() != (k, k) || allowed_end.len() != k {
            return Err(Error::ShapeMismatch("constraint mask dimensions".into()));
        }
        if allowed.rows().into_iter().any(|r| !r.iter().any(|&a| a)) {
            return Err(Error::ShapeMismatch("constraint row with no allowed successor".into()));
        }
        if !allowed_start.iter().any(|&a| a) {
            return Err(Error::ShapeMismatch("no allowed start tag".into()));
        }
        Ok(Self {
            allowed,
            allowed_start,
            allowed_end,
        })
    }

    /// Everything allowed.
    pub fn unconstrained(num_tags: usize) -> Self {
        Self {
            allowed: Array2::from_elem((num_tags, num_tags), true),
            allowed_start: vec![true; num_tags],
            allowed_end: vec![true; num_tags],
        }
    }

    pub fn num_tags(&self) -> usize {
        self.allowed_start.len()
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        self.allowed[[from, to]]
    }

    pub fn allows_start(&self, tag: usize) -> bool {
        self.allowed_start[tag]
    }

    pub fn allows_end(&self, tag: usize) -> bool {
        self.allowed_end[tag]
    }

    /// Whether a full tag sequence respects the mask.
    pub fn admits(&self, tags: &[usize]) -> bool {
        match (tags.first(), tags.last()) {
            (Some(&a), Some(&z)) => {
                self.allows_start(a)
                    && self.allows_end(z)
                    && tags.windows(2).all(|w| self.allows(w[0], w[1]))
            }
            _ => true,
        }
    }
}

/// BIO ordering constraints: no sequence may start with `I-X`, and `I-X`
/// may only follow `B-X` or `I-X`.
pub fn bio_constraint_mask(tagset: &TagSet) -> ConstraintMask {
    let k = tagset.num_tags();
    let parsed: Vec<Tag<'_>> = tagset
        .tags()
        .iter()
        .map(|t| Tag::parse(t).expect("tag set holds valid BIO tags"))
        .collect();
    let allowed = Array2::from_shape_fn((k, k), |(i, j)| match parsed[j] {
        Tag::Inside(ty) => matches!(parsed[i], Tag::Begin(p) | Tag::Inside(p) if p == ty),
        _ => true,
    });
    let allowed_start = parsed.iter().map(|t| !matches!(t, Tag::Inside(_))).collect();
    ConstraintMask {
        allowed,
        allowed_start,
        allowed_end: vec![true; k],
    }
}

fn check_shapes(e: &ArrayView2<'_, f64>, p: &CrfParams) -> Result<()> {
    let k = p.num_tags();
    if e.ncols() != k || p.transitions.dim() != (k, k) || p.end.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "emissions have {} tag columns, CRF has {}",
            e.ncols(),
            k
        )));
    }
    Ok(())
}

fn check_tags(e: &ArrayView2<'_, f64>, p: &CrfParams, tags: &[usize]) -> Result<()> {
    check_shapes(e, p)?;
    if tags.len() != e.nrows() || tags.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} tags for {} emission rows",
            tags.len(),
            e.nrows()
        )));
    }
    let k = p.num_tags();
    if let Some(&bad) = tags.iter().find(|&&t| t >= k) {
        return Err(Error::IndexOutOfRange {
            what: "tag",
            index: bad,
            bound: k,
        });
    }
    Ok(())
}

/// Log-sum-exp with max shift; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(xs: I) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unnormalized score of one tag sequence. Terms are added in the same
/// order as the forward recursion, so a single-path partition function
/// cancels against the score exactly.
pub fn score_sequence(e: ArrayView2<'_, f64>, p: &CrfParams, tags: &[usize]) -> Result<f64> {
    check_tags(&e, p, tags)?;
    let mut s = p.start[tags[0]] + e[[0, tags[0]]];
    for i in 1..tags.len() {
        s = s + p.transitions[[tags[i - 1], tags[i]]] + e[[i, tags[i]]];
    }
    Ok(s + p.end[tags[tags.len() - 1]])
}

fn forward(e: &ArrayView2<'_, f64>, p: &CrfParams) -> Array2<f64> {
    let (t, k) = e.dim();
    let mut alpha = Array2::zeros((t, k));
    for j in 0..k {
        alpha[[0, j]] = p.start[j] + e[[0, j]];
    }
    for i in 1..t {
        for j in 0..k {
            let lse = log_sum_exp((0..k).map(|a| alpha[[i - 1, a]] + p.transitions[[a, j]]));
            alpha[[i, j]] = lse + e[[i, j]];
        }
    }
    alpha
}

fn backward(e: &ArrayView2<'_, f64>, p: &CrfParams) -> Array2<f64> {
    let (t, k) = e.dim();
    let mut beta = Array2::zeros((t, k));
    for j in 0..k {
        beta[[t - 1, j]] = p.end[j];
    }
    for i in (0..t - 1).rev() {
        for a in 0..k {
            beta[[i, a]] = log_sum_exp(
                (0..k).map(|b| p.transitions[[a, b]] + e[[i + 1, b]] + beta[[i + 1, b]]),
            );
        }
    }
    beta
}

/// `log Z`: log of the summed exponentiated scores of all `K^T` sequences.
///
/// Panics if `e` has no rows or its width disagrees with `p`.
pub fn log_partition(e: ArrayView2<'_, f64>, p: &CrfParams) -> f64 {
    check_shapes(&e, p).expect("emission/CRF shape mismatch");
    assert!(e.nrows() >= 1, "log_partition needs at least one position");
    let alpha = forward(&e, p);
    let last = alpha.row(e.nrows() - 1);
    log_sum_exp((0..p.num_tags()).map(|j| last[j] + p.end[j]))
}

/// Negative log-likelihood of `tags`.
pub fn nll(e: ArrayView2<'_, f64>, p: &CrfParams, tags: &[usize]) -> Result<f64> {
    let s = score_sequence(e, p, tags)?;
    Ok(log_partition(e, p) - s)
}

/// Posterior unary marginals (T x K) and the gradient of [`nll`] with
/// respect to emissions, transitions, start and end scores.
pub fn marginals_and_grad(
    e: ArrayView2<'_, f64>,
    p: &CrfParams,
    tags: &[usize],
) -> Result<(Array2<f64>, CrfGrad)> {
    check_tags(&e, p, tags)?;
    let (t, k) = e.dim();
    let alpha = forward(&e, p);
    let beta = backward(&e, p);
    let log_z = log_sum_exp((0..k).map(|j| alpha[[t - 1, j]] + p.end[j]));

    let marginals = (&alpha + &beta).mapv(|x| (x - log_z).exp());
    let mut grad = CrfGrad {
        emissions: marginals.clone(),
        params: CrfParams::zeros(k),
    };
    for i in 1..t {
        for a in 0..k {
            for b in 0..k {
                let lp = alpha[[i - 1, a]] + p.transitions[[a, b]] + e[[i, b]] + beta[[i, b]] - log_z;
                grad.params.transitions[[a, b]] += lp.exp();
            }
        }
    }
    grad.params.start.assign(&marginals.row(0));
    grad.params.end.assign(&marginals.row(t - 1));

    for (i, &y) in tags.iter().enumerate() {
        grad.emissions[[i, y]] -= 1.0;
        if i > 0 {
            grad.params.transitions[[tags[i - 1], y]] -= 1.0;
        }
    }
    grad.params.start[tags[0]] -= 1.0;
    grad.params.end[tags[t - 1]] -= 1.0;
    Ok((marginals, grad))
}

/// Highest-scoring tag sequence, optionally restricted by `mask`.
///
/// Ties resolve to the lexicographically smallest tag-index sequence: the
/// recursion runs right to left so the path can be rebuilt left to right,
/// taking the smallest optimal tag at every step.
pub fn viterbi(
    e: ArrayView2<'_, f64>,
    p: &CrfParams,
    mask: Option<&ConstraintMask>,
) -> Result<(Vec<usize>, f64)> {
    check_shapes(&e, p)?;
    let (t, k) = e.dim();
    if t == 0 {
        return Err(Error::ShapeMismatch("viterbi needs at least one position".into()));
    }
    if let Some(m) = mask {
        if m.num_tags() != k {
            return Err(Error::ShapeMismatch("constraint mask width".into()));
        }
    }
    let allow = |a: usize, b: usize| mask.is_none_or(|m| m.allows(a, b));
    let allow_start = |a: usize| mask.is_none_or(|m| m.allows_start(a));
    let allow_end = |a: usize| mask.is_none_or(|m| m.allows_end(a));

    // best[i][a]: best score of positions i.. given tag a at i, emission included.
    let mut best = Array2::from_elem((t, k), f64::NEG_INFINITY);
    let mut next = Array2::<usize>::zeros((t, k));
    for a in 0..k {
        if allow_end(a) {
            best[[t - 1, a]] = e[[t - 1, a]] + p.end[a];
        }
    }
    for i in (0..t - 1).rev() {
        for a in 0..k {
            let mut top = f64::NEG_INFINITY;
            let mut arg = 0;
            for b in 0..k {
                if !allow(a, b) || best[[i + 1, b]] == f64::NEG_INFINITY {
                    continue;
                }
                let v = p.transitions[[a, b]] + best[[i + 1, b]];
                if v > top {
                    top = v;
                    arg = b;
                }
            }
            if top > f64::NEG_INFINITY {
                best[[i, a]] = e[[i, a]] + top;
                next[[i, a]] = arg;
            }
        }
    }
    let mut top = f64::NEG_INFINITY;
    let mut first = 0;
    for a in 0..k {
        if !allow_start(a) || best[[0, a]] == f64::NEG_INFINITY {
            continue;
        }
        let v = p.start[a] + best[[0, a]];
        if v > top {
            top = v;
            first = a;
        }
    }
    if top == f64::NEG_INFINITY {
        return Err(Error::NoAllowedPath);
    }
    let mut path = Vec::with_capacity(t);
    path.push(first);
    for i in 0..t - 1 {
        path.push(next[[i, path[i]]]);
    }
    Ok((path, top))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    fn row_sums(m: &Array2<f64>) -> Array1<f64> {
        m.sum_axis(Axis(1))
    }

    fn zeros(t: usize, k: usize) -> (Array2<f64>, CrfParams) {
        (Array2::zeros((t, k)), CrfParams::zeros(k))
    }

    #[test]
    fn score_zero_case() {
        let (e, p) = zeros(3, 3);
        assert_eq!(score_sequence(e.view(), &p, &[0, 2, 1]).unwrap(), 0.0);
    }

    #[test]
    fn score_two_positions() {
        let e = array![[0.5, -1.0], [2.0, 0.25]];
        let p = CrfParams {
            transitions: array![[0.1, 0.2], [0.3, 0.4]],
            start: array![1.0, 2.0],
            end: array![-1.0, -2.0],
        };
        let want = 1.0 + 0.5 + 0.2 + 0.25 + -2.0;
        assert_eq!(score_sequence(e.view(), &p, &[0, 1]).unwrap(), want);
    }

    #[test]
    fn score_rejects_bad_tags() {
        let (e, p) = zeros(2, 2);
        assert!(matches!(
            score_sequence(e.view(), &p, &[0, 2]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(score_sequence(e.view(), &p, &[0]).is_err());
    }

    #[test]
    fn partition_counting_cases() {
        let (e, p) = zeros(1, 3);
        assert!((log_partition(e.view(), &p) - 3f64.ln()).abs() < 1e-12);
        let (e, p) = zeros(3, 2);
        assert!((log_partition(e.view(), &p) - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_two_path_closed_form() {
        let e = array![[10.0, 0.0]];
        let p = CrfParams::zeros(2);
        let v = nll(e.view(), &p, &[0]).unwrap();
        let want = (1.0 + (-10f64).exp()).ln();
        assert!((v - want).abs() < 1e-15);
        assert!((v - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn nll_vanishes_with_huge_margin() {
        let e = array![[200.0, 0.0], [0.0, 200.0]];
        let p = CrfParams::zeros(2);
        assert!(nll(e.view(), &p, &[0, 1]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn uniform_marginals() {
        let (e, p) = zeros(2, 2);
        let (m, g) = marginals_and_grad(e.view(), &p, &[0, 1]).unwrap();
        for x in m.iter() {
            assert!((x - 0.5).abs() < 1e-12);
        }
        for s in row_sums(&g.emissions).iter() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn viterbi_independent_argmax() {
        let e = array![[10.0, 0.0], [1.0, 10.0]];
        let p = CrfParams::zeros(2);
        let (path, s) = viterbi(e.view(), &p, None).unwrap();
        assert_eq!(path, vec![0, 1]);
        assert_eq!(s, 20.0);
    }

    #[test]
    fn viterbi_forbidden_transition() {
        let e = array![[10.0, 0.0], [1.0, 10.0]];
        let p = CrfParams::zeros(2);
        let mask = ConstraintMask::new(
            array![[true, false], [true, true]],
            vec![true, true],
            vec![true, true],
        )
        .unwrap();
        let (path, s) = viterbi(e.view(), &p, Some(&mask)).unwrap();
        assert_eq!(path, vec![0, 0]);
        assert_eq!(s, 11.0);
    }

    #[test]
    fn viterbi_ties_pick_lexicographic_smallest() {
        // all sequences tie; the smallest is all zeros
        let (e, p) = zeros(4, 3);
        assert_eq!(viterbi(e.view(), &p, None).unwrap().0, vec![0, 0, 0, 0]);
        // tie between (0,1,1) and (1,1,0): a forward pass choosing the
        // smallest final tag would return the latter
        let e = array![[0.0, 0.0], [0.0, 5.0], [0.0, 0.0]];
        let p = CrfParams {
            transitions: array![[0.0, 0.0], [0.0, 0.0]],
            start: array![0.0, 1.0],
            end: array![1.0, 0.0],
        };
        // (0,1,0) scores 0+0+5+0+1 = 6, (1,1,0) scores 1+5+1 = 7
        let (path, s) = viterbi(e.view(), &p, None).unwrap();
        assert_eq!((path, s), (vec![1, 1, 0], 7.0));
        let p = CrfParams {
            transitions: array![[0.0, 0.0], [0.0, 0.0]],
            start: array![1.0, 0.0],
            end: array![0.0, 1.0],
        };
        // (0,1,1) = 1+5+1 = 7 and (1,1,1)=6, (0,1,0)=6; unique 7 is (0,1,1)
        assert_eq!(viterbi(e.view(), &p, None).unwrap().0, vec![0, 1, 1]);
        let p = CrfParams {
            transitions: array![[0.0, 0.0], [0.0, 0.0]],
            start: array![1.0, 1.0],
            end: array![1.0, 1.0],
        };
        // every path through tag 1 at position 1 scores 7; smallest is (0,1,0)
        assert_eq!(viterbi(e.view(), &p, None).unwrap().0, vec![0, 1, 0]);
    }

    #[test]
    fn bio_mask_rules() {
        let ts = TagSet::new(&["PER"]).unwrap();
        let m = bio_constraint_mask(&ts);
        assert_eq!(m.allowed_start, vec![true, true, false]);
        let (o, b, i) = (0, 1, 2);
        assert!(!m.allows(o, i));
        assert!(m.allows(b, i));
        assert!(m.allows(i, i));
        assert!(m.allows(i, o));

        let ts = TagSet::new(&["PER", "LOC"]).unwrap();
        let m = bio_constraint_mask(&ts);
        let (bper, iloc) = (ts.index_of("B-PER").unwrap(), ts.index_of("I-LOC").unwrap());
        assert!(!m.allows(bper, iloc));
    }

    #[test]
    fn degenerate_mask_errors() {
        let (e, p) = zeros(2, 2);
        let m = ConstraintMask {
            allowed: Array2::from_elem((2, 2), true),
            allowed_start: vec![true, true],
            allowed_end: vec![false, false],
        };
        assert!(matches!(viterbi(e.view(), &p, Some(&m)), Err(Error::NoAllowedPath)));
        assert!(ConstraintMask::new(Array2::from_elem((2, 2), false), vec![true; 2], vec![true; 2]).is_err());
    }
}
