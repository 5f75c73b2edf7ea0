use super::{check_target, collapse, LogitsSequence};
use crate::{Error, Result};

const MAX_PATHS: u128 = 1_000_000;

/// Exact CTC loss by enumerating all `C^T` frame paths. Test oracle only.
pub fn brute_force_ctc(lp: &LogitsSequence, target: &[usize]) -> Result<f64> {
    let (t_len, c) = (lp.frames(), lp.classes());
    let paths = (c as u128).checked_pow(t_len as u32).unwrap_or(u128::MAX);
    if paths > MAX_PATHS {
        return Err(Error::TooLarge(paths));
    }
    check_target(lp, target)?;
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    loop {
        if collapse(&path) == target {
            let log_p: f64 = path.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum();
            total += log_p.exp();
        }
        // Odometer increment over base-C digits.
        let mut i = 0;
        while i < t_len {
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == t_len {
            break;
        }
    }
    Ok(-total.ln())
}
