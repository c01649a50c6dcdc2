use std::io::Write;

use clap::Args;
use mcnet::scorenorm::{
    convergence_condition, l2_score, l2score_partial, lower_bound_ok, softmax, softmax_partial,
    top_class, ScoreVector,
};
use mcnet::SeededRng;

use crate::error::{CliError, Result};

#[derive(Args, Debug, Clone)]
pub struct NormcheckArgs {
    /// Category counts to sweep
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 10, 100])]
    pub n: Vec<usize>,

    /// Random score vectors per category count
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Scores are drawn uniformly from `[-SCALE, SCALE]`; the positivity sweep
/// uses their absolute values.
const SCALE: f64 = 5.0;
const TOL: f64 = 1e-12;
/// Above this N only `N` random `(i, j)` pairs per vector are compared.
const ALL_PAIRS_MAX_N: usize = 16;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormSweep {
    pub n: usize,
    pub samples: usize,
    pub sqrt_failures: usize,
    pub unit_norm_failures: usize,
    pub shift_failures: usize,
    pub argmax_failures: usize,
    pub pairs: usize,
    pub condition_true: usize,
    /// Pairs where the condition and the partial-derivative inequality
    /// disagree, in either direction.
    pub equivalence_failures: usize,
    pub first_equivalence_failure: Option<(Vec<f64>, usize, usize)>,
    pub positive_vectors: usize,
    pub corollary_failures: usize,
    pub first_corollary_failure: Option<Vec<f64>>,
    pub max_abs_error: f64,
}

impl NormSweep {
    pub fn identity_failures(&self) -> usize {
        self.sqrt_failures + self.unit_norm_failures + self.shift_failures + self.argmax_failures
    }
}

fn draw(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-SCALE, SCALE)).collect()
}

pub fn sweep(n: usize, samples: usize, seed: u64) -> Result<NormSweep> {
    if n < 2 || samples == 0 {
        return Err(CliError::Usage("normcheck needs N >= 2 and samples >= 1".into()));
    }
    let mut rng = SeededRng::new(seed).derive(&[n as u64]);
    let mut r = NormSweep {
        n,
        samples,
        ..Default::default()
    };
    for _ in 0..samples {
        let raw = draw(n, &mut rng);
        let x = ScoreVector::new(raw.clone())?;
        let (s, l) = (softmax(&x), l2_score(&x));
        let mut worst = 0.0f64;
        if l.values().iter().zip(s.values()).any(|(a, b)| {
            worst = worst.max((a - b.sqrt()).abs());
            (a - b.sqrt()).abs() >= TOL
        }) {
            r.sqrt_failures += 1;
        }
        let norm = (l.values().iter().map(|v| v * v).sum::<f64>() - 1.0).abs();
        worst = worst.max(norm);
        if norm >= TOL {
            r.unit_norm_failures += 1;
        }
        let c = rng.uniform_range(-50.0, 50.0);
        let shifted = l2_score(&x.shifted(c)?);
        let shift_err = l
            .values()
            .iter()
            .zip(shifted.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(shift_err);
        if shift_err >= TOL {
            r.shift_failures += 1;
        }
        let k = top_class(&x);
        if top_class(&l) != k || top_class(&s) != k {
            r.argmax_failures += 1;
        }
        r.max_abs_error = r.max_abs_error.max(worst);

        let pairs: Vec<(usize, usize)> = if n <= ALL_PAIRS_MAX_N {
            (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .collect()
        } else {
            (0..n)
                .map(|_| {
                    let i = rng.below(n);
                    let j = (i + 1 + rng.below(n - 1)) % n;
                    (i, j)
                })
                .collect()
        };
        for (i, j) in pairs {
            r.pairs += 1;
            let cond = convergence_condition(&x, i)?;
            let dominates = l2score_partial(&x, i, j)? >= softmax_partial(&x, i, j)?;
            if cond {
                r.condition_true += 1;
            }
            if cond != dominates {
                r.equivalence_failures += 1;
                r.first_equivalence_failure.get_or_insert((raw.clone(), i, j));
            }
        }

        if n >= 4 {
            let pos: Vec<f64> = raw.iter().map(|v| v.abs().max(f64::MIN_POSITIVE)).collect();
            r.positive_vectors += 1;
            if !lower_bound_ok(&ScoreVector::new(pos.clone())?) {
                r.corollary_failures += 1;
                r.first_corollary_failure.get_or_insert(pos);
            }
        }
    }
    Ok(r)
}

/// A fixed vector with its condition value and the two partials for (0, 1).
pub fn witness(x: &[f64]) -> Result<(bool, f64, f64)> {
    let v = ScoreVector::new(x.to_vec())?;
    Ok((
        convergence_condition(&v, 0)?,
        l2score_partial(&v, 0, 1)?,
        softmax_partial(&v, 0, 1)?,
    ))
}

fn fmt_vec(v: &[f64]) -> String {
    let shown: Vec<String> = v.iter().take(12).map(|x| format!("{x:.4}")).collect();
    let more = if v.len() > 12 { ", ..." } else { "" };
    format!("[{}{more}]", shown.join(", "))
}

pub fn cmd_normcheck(args: &NormcheckArgs, out: &mut dyn Write) -> Result<Vec<NormSweep>> {
    let mut text = String::new();
    for x in [vec![0.0, 0.0], vec![0.0; 8]] {
        let (cond, dl, ds) = witness(&x)?;
        text += &format!(
            "witness N={} x=0 (i=0, j=1): condition {cond}, dL {dl:.7} dS {ds:.7} dL-dS {:+.7}\n",
            x.len(),
            dl - ds
        );
    }
    let mut sweeps = Vec::new();
    for &n in &args.n {
        let r = sweep(n, args.samples, args.seed)?;
        text += &format!(
            "N={:<4} samples {}  identities: sqrt {} norm {} shift {} argmax {} failures (max abs err {:.1e})\n",
            n, r.samples, r.sqrt_failures, r.unit_norm_failures, r.shift_failures, r.argmax_failures, r.max_abs_error
        );
        text += &format!(
            "       condition <=> dL >= dS: {} pairs, condition true in {}, {} counterexamples\n",
            r.pairs, r.condition_true, r.equivalence_failures
        );
        if let Some((x, i, j)) = &r.first_equivalence_failure {
            text += &format!("       counterexample i={i} j={j} x={}\n", fmt_vec(x));
        }
        if n >= 4 {
            text += &format!(
                "       corollary (x > 0 implies min x > ln(N/4)): {} of {} positive vectors violate it\n",
                r.corollary_failures, r.positive_vectors
            );
            if let Some(x) = &r.first_corollary_failure {
                text += &format!(
                    "       corollary counterexample x={} (ln(N/4) = {:.4})\n",
                    fmt_vec(x),
                    (n as f64 / 4.0).ln()
                );
            }
        }
        sweeps.push(r);
    }
    write!(out, "{text}").map_err(CliError::io("stdout"))?;
    let bad: Vec<String> = sweeps
        .iter()
        .filter(|r| r.identity_failures() + r.equivalence_failures > 0)
        .map(|r| format!("N={}", r.n))
        .collect();
    if bad.is_empty() {
        Ok(sweeps)
    } else {
        Err(CliError::CheckFailed(format!("normalization checks failed for {}", bad.join(", "))))
    }
}
