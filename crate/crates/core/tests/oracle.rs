use procnet::oracle::{mmult_ref, scalarp_ref, sum_ref, vmmult_ref, zipwithmul_ref, Matrix, OracleError};
use procnet::runtime::{Width, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain triple loop with i128 accumulation, reduced once at the end.
fn naive(a: &[Vec<i64>], b_cols: &[Vec<i64>], bits: u32) -> Vec<Vec<i64>> {
    let reduce = |v: i128| -> i64 {
        let m = 1i128 << bits;
        let r = v.rem_euclid(m);
        (if r >= m / 2 { r - m } else { r }) as i64
    };
    b_cols
        .iter()
        .map(|col| {
            a.iter()
                .map(|row| reduce(row.iter().zip(col).map(|(x, y)| *x as i128 * *y as i128).sum()))
                .collect()
        })
        .collect()
}

fn words(v: &[i64]) -> Vec<Word> {
    v.iter().copied().map(Word).collect()
}

#[test]
fn mmult_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for bits in [4u32, 8, 16, 32] {
        let w = Width::new(bits).unwrap();
        for _ in 0..100 {
            let (n, m, k) = (rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6));
            let mut draw = |len| -> Vec<i64> { (0..len).map(|_| rng.gen_range(w.min_value()..=w.max_value())).collect() };
            let rows: Vec<Vec<i64>> = (0..n).map(|_| draw(m)).collect();
            let cols: Vec<Vec<i64>> = (0..k).map(|_| draw(m)).collect();
            let got = mmult_ref(&Matrix::from_rows(&rows).unwrap(), &Matrix::from_cols(m, &cols).unwrap(), w).unwrap();
            assert_eq!(got.cols(), naive(&rows, &cols, bits));
        }
    }
}

#[test]
fn vector_helpers() {
    let w = Width::DEFAULT;
    assert_eq!(zipwithmul_ref(&words(&[1, 2, 3]), &words(&[4, 5, 6]), w).unwrap(), words(&[4, 10, 18]));
    assert_eq!(sum_ref(&words(&[4, 10, 18]), w), Word(32));
    assert_eq!(scalarp_ref(&words(&[1, 2]), &words(&[3, 4]), w).unwrap(), Word(11));
    assert_eq!(sum_ref(&[], w), Word(0));
    let ass = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
    assert_eq!(vmmult_ref(&ass, &words(&[5, 6]), w).unwrap(), words(&[17, 39]));
}

#[test]
fn two_by_two_example() {
    let ass = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
    let bss = Matrix::from_cols(2, &[vec![5, 7], vec![6, 8]]).unwrap();
    let css = mmult_ref(&ass, &bss, Width::DEFAULT).unwrap();
    assert_eq!(css.cols(), vec![vec![19, 43], vec![22, 50]]);
    assert_eq!(css.rows(), vec![vec![19, 22], vec![43, 50]]);
}

#[test]
fn length_mismatch_rejected() {
    let e = zipwithmul_ref(&words(&[1, 2]), &words(&[1]), Width::DEFAULT).unwrap_err();
    assert!(matches!(e, OracleError::Length { left: 2, right: 1 }));
    let ass = Matrix::from_rows(&[vec![1, 2, 3]]).unwrap();
    let bss = Matrix::from_cols(2, &[vec![1, 2]]).unwrap();
    assert!(mmult_ref(&ass, &bss, Width::DEFAULT).is_err());
}

#[test]
fn identity_is_neutral() {
    let a = Matrix::from_rows(&[vec![1, -2, 3], vec![4, 5, -6]]).unwrap();
    let i = Matrix::identity(3);
    assert_eq!(mmult_ref(&a, &i, Width::DEFAULT).unwrap().rows(), a.rows());
}
