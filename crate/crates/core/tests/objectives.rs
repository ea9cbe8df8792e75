use attrgan::objectives::{loss_all, loss_condition, loss_mask, loss_part, MaskedVerdicts};
use proptest::prelude::*;

fn verdicts(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #[test]
    fn losses_ignore_batch_order(real in verdicts(2..10), fake in verdicts(2..10), rot in 0usize..10) {
        let mut r2 = real.clone();
        r2.rotate_left(rot % real.len());
        let mut f2 = fake.clone();
        f2.reverse();
        prop_assert!((loss_all(&real, &fake).unwrap() - loss_all(&r2, &f2).unwrap()).abs() < 1e-12);
        prop_assert!((loss_condition(&real, &fake).unwrap() - loss_condition(&r2, &f2).unwrap()).abs() < 1e-12);
        prop_assert!(loss_all(&real, &fake).unwrap().is_finite());
    }

    #[test]
    fn four_identical_regions_reproduce_loss_all(real in verdicts(1..8), fake in verdicts(1..8)) {
        let n = real.len().min(fake.len());
        let (real, fake) = (&real[..n], &fake[..n]);
        let whole = loss_all(real, fake).unwrap();
        let r4 = vec![real.to_vec(); 4];
        let f4 = vec![fake.to_vec(); 4];
        prop_assert_eq!(loss_part(&r4, &f4).unwrap(), whole);
        prop_assert_eq!(loss_mask(MaskedVerdicts::Part { real: &r4, fake: &f4 }).unwrap(), whole);
        prop_assert_eq!(loss_mask(MaskedVerdicts::All { real, fake }).unwrap(), whole);
    }
}

#[test]
fn out_of_range_verdicts_are_rejected() {
    assert!(loss_all(&[1.2], &[0.5]).is_err());
    assert!(loss_all(&[], &[0.5]).is_err());
    assert!(loss_part(&vec![vec![0.5]; 3], &vec![vec![0.5]; 3]).is_err());
}
