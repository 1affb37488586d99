use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples drawn (`n`) and samples passing (`c`) for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTally {
    pub task_id: String,
    pub n: u32,
    pub c: u32,
}

impl SampleTally {
    pub fn new(task_id: impl Into<String>, n: u32, c: u32) -> Result<Self, EvalError> {
        let task_id = task_id.into();
        if n == 0 || c > n {
            return Err(EvalError::BadTally { task_id, n, c });
        }
        Ok(Self { task_id, n, c })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds n = {n}{}", task_id.as_deref().map(|t| format!(" for task {t:?}")).unwrap_or_default())]
    KExceedsN {
        k: u32,
        n: u32,
        task_id: Option<String>,
    },
    #[error("no tallies to aggregate")]
    EmptyTallies,
    #[error("invalid tally for task {task_id:?}: n = {n}, c = {c}")]
    BadTally { task_id: String, n: u32, c: u32 },
}

/// Unbiased pass@k for one task: `1 - C(n-c, k) / C(n, k)`.
///
/// The binomial ratio is `prod_{i=n-c+1}^{n} (i-k)/i`, which never forms a
/// factorial. It is kept as a reduced fraction while that fits in `u128`, so
/// small cases round once (`(5, 2, 1)` is exactly `0.4`), and falls back to a
/// floating-point product otherwise.
pub fn pass_at_k(n: u32, c: u32, k: u32) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if k > n {
        return Err(EvalError::KExceedsN { k, n, task_id: None });
    }
    if c > n {
        return Err(EvalError::BadTally {
            task_id: String::new(),
            n,
            c,
        });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if let Some((num, den)) = exact_miss(n, c, k) {
        return Ok((den - num) as f64 / den as f64);
    }
    let k = f64::from(k);
    let miss = ((n - c + 1)..=n).fold(1.0_f64, |acc, i| acc * (1.0 - k / f64::from(i)));
    Ok(1.0 - miss)
}

fn exact_miss(n: u32, c: u32, k: u32) -> Option<(u128, u128)> {
    let (mut num, mut den) = (1u128, 1u128);
    for i in (n - c + 1)..=n {
        num = num.checked_mul(u128::from(i - k))?;
        den = den.checked_mul(u128::from(i))?;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    // Keep the final division within f64's exact integer range.
    (den < 1 << 53).then_some((num, den))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn pass_at_k_single(tally: &SampleTally, k: u32) -> Result<f64, EvalError> {
    pass_at_k(tally.n, tally.c, k).map_err(|e| match e {
        EvalError::KExceedsN { k, n, .. } => EvalError::KExceedsN {
            k,
            n,
            task_id: Some(tally.task_id.clone()),
        },
        other => other,
    })
}

/// Mean pass@k over tasks. Tasks with `n < k` are an error, never dropped.
pub fn pass_at_k_aggregate(tallies: &[SampleTally], k: u32) -> Result<f64, EvalError> {
    if tallies.is_empty() {
        return Err(EvalError::EmptyTallies);
    }
    let mut total = 0.0;
    for tally in tallies {
        total += pass_at_k_single(tally, k)?;
    }
    Ok(total / tallies.len() as f64)
}
