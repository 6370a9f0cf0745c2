//! Posterior regularization over universal head->dependent POS rules.
//!
//! Feature values are negative rule counts, so the expectation constraint
//! E_q[phi] <= b asks each sentence to contain at least a threshold number
//! of rule arcs. The partition function Z(lambda) is estimated over the
//! same Monte-Carlo samples as the E-step, which makes the sample mean of
//! the gamma multipliers exactly one.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::transition::{DepTree, Sentence};

/// Head side of a rule: a POS tag or the artificial root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadTag {
    Root,
    Pos(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub head: HeadTag,
    pub dependent: usize,
}

/// Ordered, duplicate-free set of universal rules resolved against the
/// active POS tag set.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<Rule>,
    label: String,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>, label: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &rules {
            if !seen.insert((r.head, r.dependent)) {
                return Err(Error::InvalidInput(format!("duplicate rule {r:?}")));
            }
        }
        Ok(RuleSet { rules, label: label.to_string() })
    }

    /// Resolves textual (head, dependent) pairs against a tag lookup. Pairs
    /// naming tags absent from the active set are skipped and returned for
    /// the caller to log. `ROOT` (any case) is the reserved head name.
    pub fn resolve<F>(
        pairs: &[(String, String)],
        lookup: F,
        label: &str,
    ) -> Result<(Self, Vec<(String, String)>)>
    where
        F: Fn(&str) -> Option<usize>,
    {
        let mut rules = Vec::new();
        let mut skipped = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (h, d) in pairs {
            let head = if h.eq_ignore_ascii_case("ROOT") {
                Some(HeadTag::Root)
            } else {
                lookup(h).map(HeadTag::Pos)
            };
            let dependent = lookup(d);
            match (head, dependent) {
                (Some(head), Some(dependent)) => {
                    if seen.insert((head, dependent)) {
                        rules.push(Rule { head, dependent });
                    }
                }
                _ => skipped.push((h.clone(), d.clone())),
            }
        }
        Ok((RuleSet::new(rules, label)?, skipped))
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Parses a rule file: one `HEAD -> DEP` per line, `#` comments.
pub fn parse_rule_file(src: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, "->");
        let head = parts.next().map(str::trim).unwrap_or("");
        let dep = parts.next().map(str::trim).unwrap_or("");
        if head.is_empty() || dep.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected `HEAD -> DEP`, got `{raw}`"),
            });
        }
        pairs.push((head.to_string(), dep.to_string()));
    }
    Ok(pairs)
}

/// Parses an expansion table: `COARSE: FINE1,FINE2,...` per line.
pub fn parse_expansion_file(src: &str) -> Result<HashMap<String, Vec<String>>> {
    let mut map = HashMap::new();
    for (lineno, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ':');
        let coarse = parts.next().map(str::trim).unwrap_or("");
        let fines = parts.next().map(str::trim).unwrap_or("");
        if coarse.is_empty() || fines.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected `COARSE: FINE1,FINE2,...`, got `{raw}`"),
            });
        }
        let list: Vec<String> = fines
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        map.insert(coarse.to_string(), list);
    }
    Ok(map)
}

/// Expands coarse rule pairs through the expansion table (cross product of
/// the head and dependent expansions); tags without an entry stand for
/// themselves, and ROOT never expands.
pub fn expand_rule_pairs(
    pairs: &[(String, String)],
    expansions: &HashMap<String, Vec<String>>,
) -> Vec<(String, String)> {
    let expand = |tag: &str| -> Vec<String> {
        if tag.eq_ignore_ascii_case("ROOT") {
            return vec![tag.to_string()];
        }
        expansions.get(tag).cloned().unwrap_or_else(|| vec![tag.to_string()])
    };
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (h, d) in pairs {
        for fh in expand(h) {
            for fd in expand(d) {
                if seen.insert((fh.clone(), fd.clone())) {
                    out.push((fh.clone(), fd));
                }
            }
        }
    }
    out
}

/// Constraint feature layout: one entry per rule, or one aggregate entry
/// counting arcs that match any rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    PerRule,
    Aggregate,
}

/// phi(x, a): negative rule-arc counts for the tree induced by `a`.
pub fn count_rule_features(
    sentence: &Sentence,
    tree: &DepTree,
    rules: &RuleSet,
    mode: FeatureMode,
) -> Vec<f64> {
    let dim = match mode {
        FeatureMode::PerRule => rules.len(),
        FeatureMode::Aggregate => 1,
    };
    let mut phi = vec![0.0; dim];
    for (d, &h) in tree.heads().iter().enumerate() {
        let head_tag = if h == 0 {
            HeadTag::Root
        } else {
            HeadTag::Pos(sentence.token(h - 1).pos)
        };
        let dep_tag = sentence.token(d).pos;
        for (k, rule) in rules.rules().iter().enumerate() {
            if rule.head == head_tag && rule.dependent == dep_tag {
                match mode {
                    FeatureMode::PerRule => phi[k] -= 1.0,
                    FeatureMode::Aggregate => phi[0] -= 1.0,
                }
            }
        }
    }
    phi
}

/// Constraint thresholds b (negative expectations).
#[derive(Debug, Clone)]
pub enum Threshold {
    /// Aggregate mode: b = -(sigma * n) for a length-n sentence.
    AggregateSigma(f64),
    /// Per-rule mode: a fixed vector, e.g. from weak supervision.
    PerRule(Vec<f64>),
}

impl Threshold {
    pub fn b_vector(&self, n: usize) -> Vec<f64> {
        match self {
            Threshold::AggregateSigma(sigma) => vec![-(sigma * n as f64)],
            Threshold::PerRule(b) => b.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Threshold::AggregateSigma(_) => 1,
            Threshold::PerRule(b) => b.len(),
        }
    }

    pub fn mode(&self) -> FeatureMode {
        match self {
            Threshold::AggregateSigma(_) => FeatureMode::Aggregate,
            Threshold::PerRule(_) => FeatureMode::PerRule,
        }
    }
}

/// Dual state of the posterior regularizer: multipliers, slack bound, and
/// the projected-gradient step size. l2 norms on both primal and dual side.
#[derive(Debug, Clone)]
pub struct PrState {
    lambda: Vec<f64>,
    pub threshold: Threshold,
    pub epsilon: f64,
    pub dual_step: f64,
    /// Frozen multipliers never move (the no-PR ablation).
    pub frozen: bool,
}

pub const DEFAULT_SIGMA: f64 = 0.8;
pub const DEFAULT_DUAL_STEP: f64 = 0.05;

impl PrState {
    pub fn new(threshold: Threshold, epsilon: f64, dual_step: f64) -> Self {
        let dim = threshold.dim();
        PrState {
            lambda: vec![0.0; dim],
            threshold,
            epsilon,
            dual_step,
            frozen: false,
        }
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn set_lambda(&mut self, lambda: Vec<f64>) {
        assert_eq!(lambda.len(), self.threshold.dim());
        assert!(lambda.iter().all(|&l| l >= 0.0));
        self.lambda = lambda;
    }

    pub fn mode(&self) -> FeatureMode {
        self.threshold.mode()
    }

    /// One projected ascent step on the dual objective
    /// -b'lambda - log Z(lambda) - epsilon ||lambda||_2, using the
    /// Monte-Carlo gradient -b + E_gamma[phi] - epsilon lambda/||lambda||
    /// (subgradient 0 at lambda = 0), then lambda <- max(lambda, 0).
    /// `constraint_grads` holds -b + E_gamma[phi] per sentence in the batch.
    pub fn dual_update(&mut self, constraint_grads: &[Vec<f64>]) {
        if self.frozen || constraint_grads.is_empty() {
            return;
        }
        let dim = self.lambda.len();
        let mut grad = vec![0.0; dim];
        for g in constraint_grads {
            debug_assert_eq!(g.len(), dim);
            for (acc, &v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        let count = constraint_grads.len() as f64;
        let lambda_norm = self.lambda.iter().map(|l| l * l).sum::<f64>().sqrt();
        for k in 0..dim {
            let mut g = grad[k] / count;
            if lambda_norm > 0.0 {
                g -= self.epsilon * self.lambda[k] / lambda_norm;
            }
            self.lambda[k] = (self.lambda[k] + self.dual_step * g).max(0.0);
        }
    }
}

/// Z, log Z and the per-sample gamma multipliers computed from one set of
/// samples. The shift by the max exponent guards against overflow; a final
/// renormalization pins the sample mean of gamma to one.
#[derive(Debug, Clone)]
pub struct GammaBatch {
    pub z_hat: f64,
    pub log_z: f64,
    pub gammas: Vec<f64>,
}

pub fn gamma_batch(lambda: &[f64], features: &[Vec<f64>]) -> GammaBatch {
    assert!(!features.is_empty(), "gamma_batch needs at least one sample");
    let exponents: Vec<f64> = features.iter().map(|phi| -dot(lambda, phi)).collect();
    let mx = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = exponents.iter().map(|e| (e - mx).exp()).collect();
    let mean_shifted = neumaier_sum(&shifted) / shifted.len() as f64;
    let log_z = mx + mean_shifted.ln();
    let mut gammas: Vec<f64> = shifted.iter().map(|s| s / mean_shifted).collect();
    // Two correction passes pin the sample mean to 1 up to one ulp.
    for _ in 0..2 {
        let mean = neumaier_sum(&gammas) / gammas.len() as f64;
        if mean != 1.0 {
            for g in &mut gammas {
                *g /= mean;
            }
        }
    }
    GammaBatch { z_hat: log_z.exp(), log_z, gammas }
}

/// Monte-Carlo estimate of Z(lambda) = E_q[exp(-lambda' phi)].
pub fn estimate_z(lambda: &[f64], features: &[Vec<f64>]) -> f64 {
    gamma_batch(lambda, features).z_hat
}

/// gamma = exp(-lambda' phi) / Z for one sample against a given Z estimate.
pub fn gamma(lambda: &[f64], phi: &[f64], z_hat: f64) -> f64 {
    (-dot(lambda, phi)).exp() / z_hat
}

/// Population variance of the gamma multipliers, logged as a diagnostic.
pub fn gamma_variance(gammas: &[f64]) -> f64 {
    let n = gammas.len() as f64;
    let mean = gammas.iter().sum::<f64>() / n;
    gammas.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n
}

/// Per-constraint slack xi_k = max(0, E_q[phi_k] - b_k) and its l2 norm.
#[derive(Debug, Clone)]
pub struct ConstraintReport {
    pub slacks: Vec<f64>,
    pub norm: f64,
    pub within_epsilon: bool,
}

pub fn constraint_report(eq_phi: &[f64], b: &[f64], epsilon: f64) -> ConstraintReport {
    let slacks: Vec<f64> = eq_phi
        .iter()
        .zip(b)
        .map(|(&e, &bk)| (e - bk).max(0.0))
        .collect();
    let norm = slacks.iter().map(|x| x * x).sum::<f64>().sqrt();
    ConstraintReport { slacks, norm, within_epsilon: norm <= epsilon }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compensated summation; keeps the gamma mean identity tight.
fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::Sentence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ruleset(rules: &[(HeadTag, usize)]) -> RuleSet {
        RuleSet::new(
            rules.iter().map(|&(head, dependent)| Rule { head, dependent }).collect(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn count_examples() {
        // tags = [Verb], heads = [0], rules = {ROOT -> Verb}
        let s = Sentence::from_tags(&[0], 0).unwrap();
        let t = DepTree::new(vec![0]).unwrap();
        let rules = ruleset(&[(HeadTag::Root, 0)]);
        assert_eq!(count_rule_features(&s, &t, &rules, FeatureMode::PerRule), vec![-1.0]);

        // tags = [Noun, Verb], heads = [2, 0], rules = {ROOT -> Verb, Verb -> Noun}
        let s = Sentence::from_tags(&[1, 0], 0).unwrap();
        let t = DepTree::new(vec![2, 0]).unwrap();
        let rules = ruleset(&[(HeadTag::Root, 0), (HeadTag::Pos(0), 1)]);
        assert_eq!(
            count_rule_features(&s, &t, &rules, FeatureMode::PerRule),
            vec![-1.0, -1.0]
        );
        assert_eq!(
            count_rule_features(&s, &t, &rules, FeatureMode::Aggregate),
            vec![-2.0]
        );

        // no rule matches
        let rules = ruleset(&[(HeadTag::Pos(1), 1)]);
        assert_eq!(count_rule_features(&s, &t, &rules, FeatureMode::PerRule), vec![0.0]);
    }

    #[test]
    fn z_examples() {
        // lambda = 0 => Z = 1 exactly
        assert_eq!(estimate_z(&[0.0], &[vec![-3.0], vec![-1.0]]), 1.0);
        // M = 1 => Z = exp(-lambda' phi)
        let z = estimate_z(&[0.5], &[vec![-2.0]]);
        assert!((z - (1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gamma_examples_and_mean_identity() {
        // lambda = 0: gamma = 1 for every sample
        let batch = gamma_batch(&[0.0], &[vec![-3.0], vec![-1.0], vec![0.0]]);
        assert!(batch.gammas.iter().all(|&g| g == 1.0));

        // identical features: gamma = 1
        let batch = gamma_batch(&[0.7], &[vec![-2.0], vec![-2.0]]);
        assert!(batch.gammas.iter().all(|&g| (g - 1.0).abs() < 1e-15));

        // more rule matches (more negative phi) get gamma > 1 under lambda > 0
        let batch = gamma_batch(&[0.5], &[vec![-3.0], vec![-1.0]]);
        assert!(batch.gammas[0] > 1.0 && batch.gammas[1] < 1.0);

        // mean of gamma is 1 to one ulp, same samples as Z
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.random_range(2..40);
            let features: Vec<Vec<f64>> = (0..m)
                .map(|_| vec![-(rng.random_range(0..6) as f64), -(rng.random_range(0..3) as f64)])
                .collect();
            let lambda = vec![rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let batch = gamma_batch(&lambda, &features);
            let mean = batch.gammas.iter().sum::<f64>() / m as f64;
            assert!(
                (mean - 1.0).abs() <= f64::EPSILON,
                "gamma mean {mean} off by {:+e}",
                mean - 1.0
            );
        }
    }

    #[test]
    fn gamma_matches_standalone_definition() {
        let features = [vec![-2.0], vec![-1.0], vec![0.0]];
        let lambda = [0.3];
        let z = estimate_z(&lambda, &features);
        for phi in &features {
            let g = gamma(&lambda, phi, z);
            assert!(g > 0.0 && g.is_finite());
        }
        // z is the mean of the unnormalized weights
        let direct: f64 =
            features.iter().map(|p| (-dot(&lambda, p)).exp()).sum::<f64>() / features.len() as f64;
        assert!((z - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn overflow_guard() {
        let features = [vec![-900.0], vec![-899.0]];
        let batch = gamma_batch(&[1.0], &features);
        assert!(batch.log_z > 890.0);
        assert!(batch.gammas.iter().all(|g| g.is_finite()));
        let mean = batch.gammas.iter().sum::<f64>() / 2.0;
        assert!((mean - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn dual_update_examples() {
        // lambda = 0, b = (-2), mean phi = -1: gradient = 2 - 1 = 1 > 0
        let mut pr = PrState::new(Threshold::PerRule(vec![-2.0]), 0.1, 0.5);
        let grads = vec![vec![2.0 + (-1.0)]];
        pr.dual_update(&grads);
        assert!(pr.lambda()[0] > 0.0);

        // satisfied with margin at lambda = 0: gradient <= 0, projection holds at 0
        let mut pr = PrState::new(Threshold::PerRule(vec![-2.0]), 0.1, 0.5);
        // E[phi] = -3 (three matches), b = -2: grad = 2 - 3 = -1
        pr.dual_update(&[vec![2.0 + (-3.0)]]);
        assert_eq!(pr.lambda()[0], 0.0);

        // lambda stays non-negative after any update
        let mut pr = PrState::new(Threshold::PerRule(vec![0.0, 0.0]), 0.1, 10.0);
        pr.set_lambda(vec![0.2, 0.0]);
        pr.dual_update(&[vec![-5.0, -0.1]]);
        assert!(pr.lambda().iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn frozen_state_never_moves() {
        let mut pr = PrState::new(Threshold::AggregateSigma(0.8), 0.1, 0.5);
        pr.frozen = true;
        pr.dual_update(&[vec![10.0]]);
        assert_eq!(pr.lambda(), &[0.0]);
    }

    #[test]
    fn constraint_report_examples() {
        let r = constraint_report(&[-3.0], &[-2.0], 0.1);
        assert_eq!(r.slacks, vec![0.0]);
        assert!(r.within_epsilon);

        let r = constraint_report(&[-1.0], &[-2.0], 0.1);
        assert_eq!(r.slacks, vec![1.0]);
        assert!(!r.within_epsilon);

        let r = constraint_report(&[0.06, 0.08], &[0.0, 0.0], 0.1);
        assert!((r.norm - 0.1).abs() < 1e-15);
        assert!(r.within_epsilon);
    }

    #[test]
    fn rule_file_parsing() {
        let src = "# comment\nROOT -> Verb\nVerb -> Noun # inline\n\nNoun -> Adjective\n";
        let pairs = parse_rule_file(src).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0], ("ROOT".to_string(), "Verb".to_string()));
        assert!(parse_rule_file("Verb Noun").is_err());
    }

    #[test]
    fn expansion_and_resolution() {
        let rules = parse_rule_file("ROOT -> Verb\nVerb -> Noun\n").unwrap();
        let exp = parse_expansion_file("Verb: VB,VBD\nNoun: NN\n").unwrap();
        let expanded = expand_rule_pairs(&rules, &exp);
        // ROOT->VB, ROOT->VBD, VB->NN, VBD->NN
        assert_eq!(expanded.len(), 4);
        let tagset = ["VB", "VBD", "NN"];
        let (rs, skipped) = RuleSet::resolve(
            &expanded,
            |t| tagset.iter().position(|&x| x == t),
            "wsj",
        )
        .unwrap();
        assert_eq!(rs.len(), 4);
        assert!(skipped.is_empty());

        // unresolvable tags are skipped, not fatal
        let pairs = vec![("ROOT".to_string(), "XYZ".to_string())];
        let (rs, skipped) = RuleSet::resolve(&pairs, |_| None, "wsj").unwrap();
        assert!(rs.is_empty());
        assert_eq!(skipped.len(), 1);
    }

    #[test]
    fn duplicate_rules_rejected() {
        let r = Rule { head: HeadTag::Root, dependent: 0 };
        assert!(RuleSet::new(vec![r, r], "dup").is_err());
    }
}
