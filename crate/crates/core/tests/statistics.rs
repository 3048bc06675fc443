use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlaug_core::analysis::{normalized_entropy, normalized_mutual_information};

// Brute-force references written directly from the definitions, in nats.

fn oracle_entropy(counts: &[u64]) -> f64 {
    let nz: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    if nz.len() <= 1 {
        return 0.0;
    }
    let n: f64 = nz.iter().sum();
    let h: f64 = nz.iter().map(|c| -(c / n) * (c / n).ln()).sum();
    h / (nz.len() as f64).ln()
}

fn oracle_nmi(table: &[Vec<u64>]) -> f64 {
    let rows = table.len();
    let cols = table[0].len();
    let n: f64 = table.iter().flatten().sum::<u64>() as f64;
    let px: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let py: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64 / n).collect();
    let mut mi = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let p = table[i][j] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).ln();
            }
        }
    }
    let h = |ps: &[f64]| ps.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum::<f64>();
    let denom = h(&px) + h(&py);
    if denom == 0.0 {
        0.0
    } else {
        2.0 * mi / denom
    }
}

fn cells(table: &[Vec<u64>]) -> Vec<((usize, usize), u64)> {
    table
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &c)| ((i, j), c)))
        .collect()
}

/// Every table of the given shape with counts 0..=max, in odometer order.
fn all_tables(rows: usize, cols: usize, max: u64, mut f: impl FnMut(&[Vec<u64>])) {
    let mut flat = vec![0u64; rows * cols];
    loop {
        let t: Vec<Vec<u64>> = flat.chunks(cols).map(<[u64]>::to_vec).collect();
        f(&t);
        let mut k = 0;
        while k < flat.len() && flat[k] == max {
            flat[k] = 0;
            k += 1;
        }
        if k == flat.len() {
            break;
        }
        flat[k] += 1;
    }
}

#[test]
fn entropy_matches_oracle_on_every_small_distribution() {
    let mut checked = 0;
    for len in 1..=6 {
        all_tables(1, len, 5, |t| {
            let counts = &t[0];
            if counts.iter().sum::<u64>() == 0 {
                assert!(normalized_entropy(counts).is_err());
                return;
            }
            let got = normalized_entropy(counts).unwrap();
            assert!((got - oracle_entropy(counts)).abs() < 1e-9, "{counts:?}: {got}");
            checked += 1;
        });
    }
    assert!(checked > 50_000);
}

#[test]
fn nmi_matches_oracle_on_tables_up_to_six_by_six() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for rows in 1..=6 {
        for cols in 1..=6 {
            let mut check = |t: &[Vec<u64>]| {
                if t.iter().flatten().sum::<u64>() == 0 {
                    assert!(normalized_mutual_information(cells(t)).is_err());
                    return;
                }
                let got = normalized_mutual_information(cells(t)).unwrap();
                assert!((got - oracle_nmi(t)).abs() < 1e-9, "{t:?}: {got}");
            };
            if rows * cols <= 6 {
                all_tables(rows, cols, 5, &mut check);
            } else {
                for _ in 0..2000 {
                    let t: Vec<Vec<u64>> = (0..rows)
                        .map(|_| (0..cols).map(|_| rng.random_range(0..=5)).collect())
                        .collect();
                    check(&t);
                }
            }
        }
    }
}

#[test]
fn analytic_values() {
    assert!((normalized_entropy(&[3, 3, 3, 3]).unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(normalized_entropy(&[7]).unwrap(), 0.0);
    assert_eq!(normalized_entropy(&[0, 7, 0]).unwrap(), 0.0);
    let identity: Vec<_> = (0..5).map(|i| ((i, i), 2 + i as u64)).collect();
    assert!((normalized_mutual_information(identity).unwrap() - 1.0).abs() < 1e-9);
    let product = cells(&[vec![1, 2, 3], vec![2, 4, 6]]);
    assert!(normalized_mutual_information(product).unwrap().abs() < 1e-9);
}

fn table_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1usize..=6, 1usize..=6)
        .prop_flat_map(|(r, c)| proptest::collection::vec(proptest::collection::vec(0u64..=20, c), r))
        .prop_filter("non-empty", |t| t.iter().flatten().sum::<u64>() > 0)
}

fn transpose(t: &[Vec<u64>]) -> Vec<Vec<u64>> {
    (0..t[0].len()).map(|j| t.iter().map(|r| r[j]).collect()).collect()
}

proptest! {
    #[test]
    fn entropy_is_bounded_and_permutation_invariant(mut counts in proptest::collection::vec(0u64..50, 1..12)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let h = normalized_entropy(&counts).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        counts.reverse();
        prop_assert!((normalized_entropy(&counts).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_scale_invariant(counts in proptest::collection::vec(1u64..50, 1..12)) {
        let scaled: Vec<u64> = counts.iter().map(|c| 4 * c).collect();
        prop_assert!((normalized_entropy(&scaled).unwrap() - normalized_entropy(&counts).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nmi_is_bounded_and_symmetric(t in table_strategy()) {
        let i = normalized_mutual_information(cells(&t)).unwrap();
        prop_assert!((0.0..=1.0).contains(&i));
        let back = normalized_mutual_information(cells(&transpose(&t))).unwrap();
        prop_assert!((i - back).abs() < 1e-12);
    }

    #[test]
    fn nmi_ignores_row_order_and_scale(t in table_strategy()) {
        let i = normalized_mutual_information(cells(&t)).unwrap();
        let mut rev = t.clone();
        rev.reverse();
        prop_assert!((normalized_mutual_information(cells(&rev)).unwrap() - i).abs() < 1e-12);
        let scaled: Vec<Vec<u64>> = t.iter().map(|r| r.iter().map(|c| 4 * c).collect()).collect();
        prop_assert!((normalized_mutual_information(cells(&scaled)).unwrap() - i).abs() < 1e-12);
    }
}
