//! Input strategies and checks for the core invariants, shared by the
//! property suite and the acceptance run.

use num_bigint::BigInt;
use num_integer::Integer;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intsnn::conv::{unfold, ConvSpec};
use intsnn::cost::OpCounter;
use intsnn::neuron::{LifLayerState, LifParams};
use intsnn::recurrent::{recurrent_step, RecurrentWeights};
use intsnn::tensor::{BitWidth, IntTensor};
use intsnn::weights::{clip_gradient, MixedPrecisionLayerWeights, UpdateParams};

pub type Check = Result<(), TestCaseError>;

pub fn floor_shift(x: i64, k: u32) -> i64 {
    let q = BigInt::from(x).div_floor(&(BigInt::from(1) << k as usize));
    i64::try_from(q).unwrap()
}

pub fn width() -> impl Strategy<Value = BitWidth> {
    (2u32..=32).prop_map(|b| BitWidth::new(b).unwrap())
}

fn values_in(w: BitWidth, len: usize) -> impl Strategy<Value = Vec<i32>> {
    prop::collection::vec(w.min_value()..=w.max_value(), len).prop_map(|v| v.into_iter().map(|x| x as i32).collect())
}

pub fn tensor() -> impl Strategy<Value = IntTensor> {
    (width(), 1usize..40).prop_flat_map(|(w, n)| values_in(w, n).prop_map(move |d| IntTensor::from_vec(&[n], w, d).unwrap()))
}

pub fn shift_inputs() -> impl Strategy<Value = (IntTensor, u32)> {
    (tensor(), 0u32..32)
}

pub fn shift_matches_floor((t, k): (IntTensor, u32)) -> Check {
    let s = t.shift_right_arith(k);
    for (&a, &b) in t.data().iter().zip(s.data()) {
        prop_assert_eq!(b as i64, floor_shift(a as i64, k));
    }
    Ok(())
}

pub fn saturation_inputs() -> impl Strategy<Value = (IntTensor, BitWidth)> {
    (tensor(), width())
}

pub fn saturation_idempotent((t, to): (IntTensor, BitWidth)) -> Check {
    let once = t.saturate(to);
    let twice = once.saturate(to);
    prop_assert_eq!(twice.data(), once.data());
    for (&x, &y) in t.data().iter().zip(once.data()) {
        prop_assert!(to.contains(y as i64));
        if to.contains(x as i64) {
            prop_assert_eq!(x, y);
        }
    }
    Ok(())
}

pub fn clip_inputs() -> impl Strategy<Value = (Vec<i32>, i32)> {
    (prop::collection::vec(any::<i32>(), 1..64), 1i32..=i32::MAX)
}

pub fn clip_within_bounds((d, clip): (Vec<i32>, i32)) -> Check {
    let n = d.len();
    let t = IntTensor::from_vec(&[n], BitWidth::W32, d.clone()).unwrap();
    let c = clip_gradient(&t, clip);
    for (&x, &y) in d.iter().zip(c.data()) {
        prop_assert!(-clip <= y && y <= clip);
        if x.abs() <= clip && x != i32::MIN {
            prop_assert_eq!(x, y);
        } else {
            prop_assert_eq!(y, clip * x.signum());
        }
    }
    Ok(())
}

pub fn trace_inputs() -> impl Strategy<Value = (u64, u32, usize)> {
    (any::<u64>(), 0u32..4, 1usize..12)
}

pub fn traces_monotone((seed, beta, steps): (u64, u32, usize)) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, i) = (2, 3, 5);
    let shadow: Vec<i32> = (0..n * i).map(|_| rng.gen_range(-128..128)).collect();
    let w = MixedPrecisionLayerWeights::from_shadow(
        IntTensor::from_vec(&[n, i], BitWidth::W8, shadow).unwrap(),
        BitWidth::W8,
        UpdateParams { eta_shift: 0, decay_shift: 8, clip: 1 },
    )
    .unwrap();
    let params = LifParams::new(rng.gen_range(1..200), rng.gen_range(1..200), beta).unwrap();
    let mut st = LifLayerState::new(b, n, i, params, BitWidth::W32);
    let mut counter = OpCounter::new();
    let mut prev = st.t_corr.data().to_vec();
    for _ in 0..steps {
        let s: Vec<i32> = (0..b * i).map(|_| rng.gen_bool(0.5) as i32).collect();
        st.step(&IntTensor::binary(&[b, i], s).unwrap(), &w, &mut counter).unwrap();
        for (&a, &c) in prev.iter().zip(st.t_corr.data()) {
            prop_assert!(c >= a);
        }
        // geometric bound of the leaky trace with unit input
        let bound = if beta == 0 { steps as i64 } else { 2 };
        for &p in st.t_pre.data() {
            prop_assert!(p >= 0 && p as i64 <= bound);
        }
        prev = st.t_corr.data().to_vec();
    }
    Ok(())
}

pub fn recurrence_inputs() -> impl Strategy<Value = (u64, u32, u32, usize)> {
    (any::<u64>(), 16u32..=32, 0u32..4, 1usize..8)
}

pub fn zero_recurrence_is_feedforward((seed, vb, beta, steps): (u64, u32, u32, usize)) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, i) = (2, 4, 6);
    let shadow: Vec<i32> = (0..n * i).map(|_| rng.gen_range(-2048..2048)).collect();
    let w = MixedPrecisionLayerWeights::from_shadow(
        IntTensor::from_vec(&[n, i], BitWidth::new(12).unwrap(), shadow).unwrap(),
        BitWidth::W8,
        UpdateParams { eta_shift: 0, decay_shift: 8, clip: 1 },
    )
    .unwrap();
    let rec = RecurrentWeights::new(IntTensor::zeros(&[n, n], BitWidth::W8)).unwrap();
    let params = LifParams::new(rng.gen_range(1..300), 10, beta).unwrap();
    let mut a = LifLayerState::new(b, n, i, params, BitWidth::new(vb).unwrap());
    let mut r = a.clone();
    let mut counter = OpCounter::new();
    for _ in 0..steps {
        let s: Vec<i32> = (0..b * i).map(|_| rng.gen_bool(0.6) as i32).collect();
        let x = IntTensor::binary(&[b, i], s).unwrap();
        let sa = a.lif_step(&x, &w, &mut counter).unwrap();
        let sr = recurrent_step(&mut r, &x, &w, &rec, &mut counter).unwrap();
        prop_assert_eq!(sa.data(), sr.data());
        prop_assert_eq!(a.v.data(), r.v.data());
    }
    Ok(())
}

pub fn unfold_inputs() -> impl Strategy<Value = (ConvSpec, usize, usize, u64)> {
    (1usize..=3, 1usize..=2, 1usize..=4, 1usize..=3, 0usize..=2, 1usize..=9, 1usize..=9, any::<u64>()).prop_map(
        |(in_channels, out_channels, kernel, stride, padding, h, w, seed)| {
            (ConvSpec { in_channels, out_channels, kernel, stride, padding }, h, w, seed)
        },
    )
}

pub fn unfold_fold_conserves((spec, h, w, seed): (ConvSpec, usize, usize, u64)) -> Check {
    let Ok((oh, ow)) = spec.output_dims(h, w) else {
        return Ok(());
    };
    let (ci, k, stride, padding) = (spec.in_channels, spec.kernel, spec.stride, spec.padding);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<i32> = (0..ci * h * w).map(|_| rng.gen_range(-50..50)).collect();
    let x = IntTensor::from_vec(&[1, ci, h, w], BitWidth::W16, data.clone()).unwrap();
    let cols = unfold(&x, &spec).unwrap();
    prop_assert_eq!(cols.len(), oh * ow * spec.patch_len());
    // Fold by scatter-adding each patch back; every pixel comes back
    // multiplied by the number of windows that cover it.
    let mut folded = vec![0i64; ci * h * w];
    let mut cover = vec![0i64; ci * h * w];
    let q = spec.patch_len();
    for y in 0..oh {
        for xx in 0..ow {
            for c in 0..ci {
                for u in 0..k {
                    for v in 0..k {
                        let iy = (y * stride + u) as isize - padding as isize;
                        let ix = (xx * stride + v) as isize - padding as isize;
                        let val = cols.data()[(y * ow + xx) * q + (c * k + u) * k + v] as i64;
                        if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                            prop_assert_eq!(val, 0);
                            continue;
                        }
                        let at = (c * h + iy as usize) * w + ix as usize;
                        folded[at] += val;
                        cover[at] += 1;
                    }
                }
            }
        }
    }
    for at in 0..data.len() {
        prop_assert_eq!(folded[at], data[at] as i64 * cover[at]);
    }
    let total: i64 = cols.data().iter().map(|&v| v as i64).sum();
    let expect: i64 = data.iter().zip(&cover).map(|(&d, &c)| d as i64 * c).sum();
    prop_assert_eq!(total, expect);
    Ok(())
}
