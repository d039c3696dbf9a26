//! Rank-correlation statistics.

use super::HarnessError;

/// Kendall's tau-b with tie correction:
///
/// `tau_b = (C - D) / sqrt((n0 - t_x) * (n0 - t_y))`
///
/// where `C`/`D` count concordant/discordant pairs, `n0 = n(n-1)/2`, and
/// `t_x`/`t_y` count pairs tied in each input. Errors when either input is
/// fully tied (the coefficient is undefined).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, HarnessError> {
    assert_eq!(x.len(), y.len(), "inputs must pair up");
    let n = x.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite values");
            let dy = y[i].partial_cmp(&y[j]).expect("finite values");
            match (dx, dy) {
                (std::cmp::Ordering::Equal, std::cmp::Ordering::Equal) => {
                    ties_x += 1;
                    ties_y += 1;
                }
                (std::cmp::Ordering::Equal, _) => ties_x += 1,
                (_, std::cmp::Ordering::Equal) => ties_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if n0 == ties_x {
        return Err(HarnessError::AllTied("first input"));
    }
    if n0 == ties_y {
        return Err(HarnessError::AllTied("second input"));
    }
    let denom = (((n0 - ties_x) as f64) * ((n0 - ties_y) as f64)).sqrt();
    Ok((concordant - discordant) as f64 / denom)
}
