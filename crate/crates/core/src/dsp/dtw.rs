//! Dynamic time warping over cepstral frames and the DTW-aligned
//! mel-cepstral distortion.

use super::Cepstrogram;
use crate::error::{Error, Result};

/// dB scaling of the per-frame Euclidean cepstral distance:
/// `(10 / ln 10) * sqrt(2)`.
pub const MCD_SCALE: f64 = 6.141851463713754;

/// A minimum-cost monotone alignment path and its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Index pairs from `(0, 0)` to `(n-1, m-1)`, each step one of
    /// `(+1, 0)`, `(0, +1)`, `(+1, +1)`.
    pub path: Vec<(usize, usize)>,
    /// Sum of per-pair frame distances along the path.
    pub total_cost: f64,
}

fn frame_dist(a: &Cepstrogram, i: usize, b: &Cepstrogram, j: usize) -> f64 {
    a.frame(i)
        .iter()
        .zip(b.frame(j).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimum-total-cost monotone alignment with per-pair Euclidean frame
/// distance. Ties during backtrack prefer the diagonal step, then the step
/// consuming a frame of `a`.
pub fn dtw(a: &Cepstrogram, b: &Cepstrogram) -> Result<DtwResult> {
    if a.n_frames() == 0 || b.n_frames() == 0 {
        return Err(Error::InvalidInput("dtw inputs must be non-empty".into()));
    }
    if a.n_coeffs() != b.n_coeffs() {
        return Err(Error::InvalidInput(format!(
            "dtw inputs must share coefficient count ({} vs {})",
            a.n_coeffs(),
            b.n_coeffs()
        )));
    }
    let (n, m) = (a.n_frames(), b.n_frames());

    let mut acc = vec![vec![f64::INFINITY; m]; n];
    acc[0][0] = frame_dist(a, 0, b, 0);
    for i in 0..n {
        for j in 0..m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            if i > 0 && j > 0 {
                best = best.min(acc[i - 1][j - 1]);
            }
            if i > 0 {
                best = best.min(acc[i - 1][j]);
            }
            if j > 0 {
                best = best.min(acc[i][j - 1]);
            }
            acc[i][j] = best + frame_dist(a, i, b, j);
        }
    }

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && acc[i - 1][j - 1] <= acc[i - 1][j] && acc[i - 1][j - 1] <= acc[i][j - 1]
        {
            i -= 1;
            j -= 1;
        } else if i > 0 && (j == 0 || acc[i - 1][j] <= acc[i][j - 1]) {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();

    Ok(DtwResult {
        path,
        total_cost: acc[n - 1][m - 1],
    })
}

/// DTW-aligned mel-cepstral distortion in dB: `MCD_SCALE` times the mean
/// per-pair Euclidean distance along the optimal path.
pub fn mcd(a: &Cepstrogram, b: &Cepstrogram) -> Result<f64> {
    let aligned = dtw(a, b)?;
    Ok(MCD_SCALE * aligned.total_cost / aligned.path.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cep(rows: &[&[f64]]) -> Cepstrogram {
        Cepstrogram::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// Exhaustive monotone-path enumeration; the independent oracle.
    pub(crate) fn brute_force_min_cost(a: &Cepstrogram, b: &Cepstrogram) -> f64 {
        fn go(a: &Cepstrogram, b: &Cepstrogram, i: usize, j: usize) -> f64 {
            let here = frame_dist(a, i, b, j);
            if i == 0 && j == 0 {
                return here;
            }
            let mut best = f64::INFINITY;
            if i > 0 && j > 0 {
                best = best.min(go(a, b, i - 1, j - 1));
            }
            if i > 0 {
                best = best.min(go(a, b, i - 1, j));
            }
            if j > 0 {
                best = best.min(go(a, b, i, j - 1));
            }
            here + best
        }
        go(a, b, a.n_frames() - 1, b.n_frames() - 1)
    }

    #[test]
    fn identical_sequences_take_the_diagonal() {
        let a = cep(&[&[1.0, 0.0], &[2.0, 1.0], &[3.0, -1.0]]);
        let r = dtw(&a, &a).unwrap();
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(r.total_cost, 0.0);
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn scalar_example_costs_one() {
        let a = cep(&[&[1.0], &[2.0], &[3.0]]);
        let b = cep(&[&[1.0], &[3.0]]);
        let r = dtw(&a, &b).unwrap();
        assert!((r.total_cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_single_frame_path() {
        let a = cep(&[&[0.0]]);
        let b = cep(&[&[0.0], &[0.0], &[0.0]]);
        let r = dtw(&a, &b).unwrap();
        assert_eq!(r.path, vec![(0, 0), (0, 1), (0, 2)]);
        assert_eq!(r.total_cost, 0.0);
    }

    #[test]
    fn single_coefficient_unit_difference_is_the_mcd_constant() {
        let a = cep(&[&[0.0]]);
        let b = cep(&[&[1.0]]);
        let m = mcd(&a, &b).unwrap();
        assert!((m - MCD_SCALE).abs() < 1e-12);
        assert!((MCD_SCALE - (10.0 / 10f64.ln()) * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn path_is_valid_and_cost_matches_path_sum() {
        let mut rng = crate::rng::rng_from_seed(5);
        use rand::Rng;
        for _ in 0..50 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=6);
            let a = Cepstrogram::from_rows(
                (0..n).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
            )
            .unwrap();
            let b = Cepstrogram::from_rows(
                (0..m).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
            )
            .unwrap();
            let r = dtw(&a, &b).unwrap();
            assert_eq!(*r.path.first().unwrap(), (0, 0));
            assert_eq!(*r.path.last().unwrap(), (n - 1, m - 1));
            for w in r.path.windows(2) {
                let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                assert!(matches!((di, dj), (1, 0) | (0, 1) | (1, 1)));
            }
            let path_sum: f64 = r.path.iter().map(|&(i, j)| frame_dist(&a, i, &b, j)).sum();
            assert!((path_sum - r.total_cost).abs() < 1e-9);
            // Symmetric step set and cost.
            let rev = dtw(&b, &a).unwrap();
            assert!((rev.total_cost - r.total_cost).abs() < 1e-9);
            // Matches the exhaustive enumeration.
            assert!((r.total_cost - brute_force_min_cost(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn two_frame_vs_one_frame_matches_brute_force() {
        let a = cep(&[&[0.0], &[2.0]]);
        let b = cep(&[&[1.0]]);
        let r = dtw(&a, &b).unwrap();
        assert!((r.total_cost - brute_force_min_cost(&a, &b)).abs() < 1e-12);
        assert!((r.total_cost - 2.0).abs() < 1e-12);
        let m = mcd(&a, &b).unwrap();
        assert!((m - MCD_SCALE * 2.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(Cepstrogram::from_rows(vec![]).is_err());
    }
}
