//! Exact two-sided sign test p-values from big-integer binomial sums.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use bitrain_core::eval::{sign_test, sign_test_counts};

use super::Outcome;

fn choose(n: u64, k: u64) -> BigUint {
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..k {
        num *= n - i;
        den *= i + 1;
    }
    num / den
}

/// `min(1, 2 * P(X <= min(w, l)))` for `X ~ Binomial(w + l, 1/2)`.
pub fn p_value(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    let k = wins.min(losses);
    let mut tail = BigUint::zero();
    for i in 0..=k {
        tail += choose(n, i);
    }
    let doubled = tail * 2u32;
    let whole = BigUint::one() << n as usize;
    if doubled >= whole {
        return 1.0;
    }
    // Both fit in f64 exactly for n <= 52; beyond that the ratio rounds once.
    doubled.to_f64().unwrap() / whole.to_f64().unwrap()
}

/// Every split with `1 <= w + l <= max_n`, plus score-vector entry points
/// with ties.
pub fn run(max_n: u64) -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in 1..=max_n {
        for w in 0..=n {
            let got = sign_test_counts(w, n - w).unwrap();
            worst = worst.max((got - p_value(w, n - w)).abs());
            checked += 1;
        }
    }
    if sign_test_counts(0, 0).is_ok() {
        return Outcome::new(false, "all-tie comparison was accepted");
    }
    let a = [1.0, 2.0, 3.0, 3.0, 5.0, 0.5, 7.0];
    let b = [0.0, 2.0, 1.0, 4.0, 1.0, 0.1, 6.0];
    let st = sign_test(&a, &b).unwrap();
    if (st.wins, st.losses, st.ties) != (5, 1, 1) || (st.p_value - p_value(5, 1)).abs() > 1e-12 {
        return Outcome::new(false, format!("score vectors gave {st:?}"));
    }
    Outcome::new(worst <= 1e-12, format!("{checked} (w, l) splits, max deviation {worst:.1e}"))
}
