use crate::error::{Error, Result};

/// Largest design the full-factorial fallback will enumerate.
pub const MAX_FACTORIAL_RUNS: usize = 4096;

fn is_prime(s: usize) -> bool {
    s >= 2 && (2..).take_while(|d| d * d <= s).all(|d| s % d != 0)
}

/// Level matrix with one row per run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Design {
    pub levels: usize,
    pub runs: Vec<Vec<usize>>,
    /// True for the Galois-field construction, false for the factorial fallback.
    pub orthogonal: bool,
}

/// Strength-2 orthogonal array `OA(s^k, f, s, 2)` via the Rao–Hamming
/// construction over GF(s), with the smallest `k` that provides `f` columns.
/// Non-prime `s` falls back to the full factorial when it has at most
/// [`MAX_FACTORIAL_RUNS`] runs.
pub fn orthogonal_array(levels: usize, factors: usize) -> Result<Design> {
    let unsupported = Error::UnsupportedDesign { levels, factors };
    if levels < 2 || factors == 0 {
        return Err(unsupported);
    }
    if is_prime(levels) {
        let s = levels;
        let mut k = 1u32;
        while (s.pow(k) - 1) / (s - 1) < factors {
            k += 1;
        }
        let k = k as usize;
        // Column generators: one representative per 1-D subspace of GF(s)^k,
        // normalized so the leading nonzero coordinate is 1. Enumerating by
        // leading position from the last coordinate keeps L4 and L9 in their
        // textbook column order.
        let mut gens: Vec<Vec<usize>> = Vec::new();
        for lead in (0..k).rev() {
            let tail = k - lead - 1;
            for t in 0..s.pow(tail as u32) {
                let mut g = vec![0; k];
                g[lead] = 1;
                let mut rest = t;
                for slot in g.iter_mut().skip(lead + 1).rev() {
                    *slot = rest % s;
                    rest /= s;
                }
                gens.push(g);
            }
        }
        gens.truncate(factors);
        let runs = (0..s.pow(k as u32))
            .map(|r| {
                let mut u = vec![0; k];
                let mut rest = r;
                for slot in u.iter_mut().rev() {
                    *slot = rest % s;
                    rest /= s;
                }
                gens.iter()
                    .map(|g| g.iter().zip(&u).map(|(a, b)| a * b).sum::<usize>() % s)
                    .collect()
            })
            .collect();
        return Ok(Design {
            levels,
            runs,
            orthogonal: true,
        });
    }
    let total = (0..factors).try_fold(1usize, |acc, _| acc.checked_mul(levels));
    match total {
        Some(t) if t <= MAX_FACTORIAL_RUNS => {
            log::warn!(
                "{levels} levels is not prime; using a {t}-run full factorial instead of an orthogonal array"
            );
            let runs = (0..t)
                .map(|r| {
                    let mut row = vec![0; factors];
                    let mut rest = r;
                    for slot in row.iter_mut().rev() {
                        *slot = rest % levels;
                        rest /= levels;
                    }
                    row
                })
                .collect();
            Ok(Design {
                levels,
                runs,
                orthogonal: false,
            })
        }
        _ => Err(unsupported),
    }
}

/// Largest prime `s ≥ 2` whose strength-2 array for `factors` columns fits in
/// `budget` runs.
pub fn largest_design_within(budget: usize, factors: usize) -> Option<usize> {
    (2..=budget)
        .filter(|s| is_prime(*s))
        .filter(|&s| {
            let mut k = 1u32;
            while (s.pow(k) - 1) / (s - 1) < factors {
                k += 1;
            }
            s.checked_pow(k).is_some_and(|runs| runs <= budget)
        })
        .last()
}

/// Interior quantile `(i + 0.5) / s` of level `i`.
pub fn level_quantile(level: usize, levels: usize) -> f64 {
    (level as f64 + 0.5) / levels as f64
}
