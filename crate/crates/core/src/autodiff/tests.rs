use super::*;

fn t32(shape: Vec<usize>, data: Vec<f32>) -> Tensor<f32> {
    Tensor::new(shape, data).unwrap()
}

#[test]
fn fc_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(vec![2], vec![1.0, 2.0])).unwrap();
    let w = tape.param(t32(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0])).unwrap();
    let b = tape.param(t32(vec![2], vec![0.0, 1.0])).unwrap();
    let y = tape.fc(x, w, b).unwrap();
    assert_eq!(tape.value(y), &[3.0, 3.0]);

    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
    let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
    let w = tape.param(eye).unwrap();
    let b = tape.param(Tensor::zeros(vec![3])).unwrap();
    let y = tape.fc(x, w, b).unwrap();
    assert_eq!(tape.value(y), &[0.5, -1.0, 2.0]);
    let g = tape
        .constant(Tensor::new(vec![3], vec![0.3, -0.7, 1.1]).unwrap())
        .unwrap();
    let prod = tape.mul(y, g).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(x), vec![0.3, -0.7, 1.1]);
    assert_eq!(grads.wrt(b), vec![0.3, -0.7, 1.1]);
    // dW = g ⊗ x
    assert_eq!(grads.wrt(w)[3 + 2], -0.7 * 2.0);
}

#[test]
fn fc_shape_mismatch() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(vec![3])).unwrap();
    let w = tape.param(Tensor::zeros(vec![2, 2])).unwrap();
    let b = tape.param(Tensor::zeros(vec![2])).unwrap();
    assert!(matches!(tape.fc(x, w, b), Err(TensorError::Shape { op: "fc", .. })));
}

fn identity_kernel(c: usize) -> Tensor<f32> {
    let mut k = vec![0.0; c * c * 9];
    for i in 0..c {
        k[(i * c + i) * 9 + 4] = 1.0;
    }
    t32(vec![c, c, 3, 3], k)
}

#[test]
fn conv_identity_kernel_is_bitwise_identity() {
    let data: Vec<f32> = (0..2 * 5 * 7).map(|i| ((i * 37 % 23) as f32 - 11.0) / 7.0).collect();
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(vec![2, 5, 7], data.clone())).unwrap();
    let k = tape.param(identity_kernel(2)).unwrap();
    let b = tape.param(Tensor::zeros(vec![2])).unwrap();
    let y = tape.conv3x3(x, k, b).unwrap();
    assert_eq!(tape.value(y), data.as_slice());
}

#[test]
fn conv_ones_on_constant_plane() {
    let c = 0.5f32;
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(vec![1, 4, 5], vec![c; 20])).unwrap();
    let k = tape.param(t32(vec![1, 1, 3, 3], vec![1.0; 9])).unwrap();
    let b = tape.param(Tensor::zeros(vec![1])).unwrap();
    let y = tape.conv3x3(x, k, b).unwrap();
    let v = tape.value(y);
    assert_eq!(v[0], 4.0 * c); // corner
    assert_eq!(v[5 + 2], 9.0 * c); // interior
    assert_eq!(v[2], 6.0 * c); // top edge
}

#[test]
fn conv_single_pixel() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(vec![1, 1, 1], vec![3.0])).unwrap();
    let mut k = vec![0.25f32; 9];
    k[4] = 2.0;
    let k = tape.param(t32(vec![1, 1, 3, 3], k)).unwrap();
    let b = tape.param(Tensor::zeros(vec![1])).unwrap();
    let y = tape.conv3x3(x, k, b).unwrap();
    assert_eq!(tape.value(y), &[6.0]);
}

#[test]
fn pixel_shuffle_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t32(vec![4, 1, 1], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    let y = tape.pixel_shuffle(x, 2).unwrap();
    assert_eq!(tape.shape(y), &[1, 2, 2]);
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);

    let data: Vec<f32> = (0..3 * 2 * 2).map(|i| i as f32).collect();
    let x = tape.constant(t32(vec![3, 2, 2], data.clone())).unwrap();
    let y = tape.pixel_shuffle(x, 1).unwrap();
    assert_eq!(tape.value(y), data.as_slice());

    let data: Vec<f32> = (0..25 * 6 * 8).map(|i| i as f32).collect();
    let x = tape.constant(t32(vec![25, 6, 8], data.clone())).unwrap();
    let y = tape.pixel_shuffle(x, 5).unwrap();
    assert_eq!(tape.shape(y), &[1, 30, 40]);
    let out = tape.value(y);
    for (yy, xx, dy, dx) in [(0, 0, 0, 0), (3, 7, 4, 2), (5, 1, 2, 3)] {
        let src = data[(dy * 5 + dx) * 48 + yy * 8 + xx];
        assert_eq!(out[(5 * yy + dy) * 40 + 5 * xx + dx], src);
    }

    let x = tape.constant(Tensor::zeros(vec![6, 2, 2])).unwrap();
    assert!(matches!(
        tape.pixel_shuffle(x, 2),
        Err(TensorError::IndivisibleChannels { channels: 6, factor: 2 })
    ));
}

#[test]
fn silu_and_sigmoid_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape
        .param(Tensor::new(vec![3], vec![0.0, 1.0, -20.0]).unwrap())
        .unwrap();
    let y = tape.silu(x).unwrap();
    let v = tape.value(y).to_vec();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
    assert!((v[2] + 4.122_307e-8).abs() < 1e-13);
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap().wrt(x);
    assert_eq!(g[0], 0.5);

    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(vec![3], vec![0.0, 40.0, -40.0])).unwrap();
    let y = tape.sigmoid(x).unwrap();
    let v = tape.value(y).to_vec();
    assert_eq!(v[0], 0.5);
    assert_eq!(v[1], 1.0);
    assert!(v[2] >= 0.0 && v[2] < 1e-17);
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap().wrt(x);
    assert_eq!(g[0], 0.25);
    assert!(g.iter().all(|d| d.is_finite()));
}

#[test]
fn reductions_and_elementwise() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let m = tape.mean(x).unwrap();
    assert_eq!(tape.value(m), &[2.0]);
    assert_eq!(tape.backward(m).unwrap().wrt(x), vec![1.0 / 3.0; 3]);

    let mut tape = Tape::<f64>::new();
    let x = tape
        .param(Tensor::new(vec![3], vec![-1.0, 1.0, 0.0]).unwrap())
        .unwrap();
    let m = tape.abs_mean(x).unwrap();
    assert_eq!(tape.value(m), &[2.0 / 3.0]);
    assert_eq!(
        tape.backward(m).unwrap().wrt(x),
        vec![-1.0 / 3.0, 1.0 / 3.0, 0.0]
    );

    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(vec![2], vec![-1.0, 1.0]).unwrap()).unwrap();
    let m = tape.abs_mean(x).unwrap();
    assert_eq!(tape.value(m), &[1.0]);

    let mut tape = Tape::<f32>::new();
    let a = tape.param(t32(vec![3], vec![0.5, -2.0, 7.0])).unwrap();
    let r = tape.div(a, a).unwrap();
    assert_eq!(tape.value(r), &[1.0; 3]);
    let z = tape.constant(t32(vec![3], vec![1.0, 0.0, 1.0])).unwrap();
    assert_eq!(tape.div(a, z), Err(TensorError::DivisorTooSmall));
    let bad = tape.constant(Tensor::zeros(vec![2])).unwrap();
    assert!(matches!(tape.add(a, bad), Err(TensorError::Shape { .. })));
}

#[test]
fn scalar_weight_regression_gradient() {
    // loss = mean((w·x − t)²); d/dw = 2·mean(x·(w·x − t))
    let (w0, xs, ts) = (1.5f64, [2.0, -1.0], [1.0, 0.5]);
    let mut tape = Tape::<f64>::new();
    let w = tape.param(Tensor::new(vec![1], vec![w0]).unwrap()).unwrap();
    let x = tape.constant(Tensor::new(vec![2], xs.to_vec()).unwrap()).unwrap();
    let t = tape.constant(Tensor::new(vec![2], ts.to_vec()).unwrap()).unwrap();
    let wx = tape.mul(w, x).unwrap();
    let r = tape.sub(wx, t).unwrap();
    let sq = tape.mul(r, r).unwrap();
    let loss = tape.mean(sq).unwrap();
    let g = tape.backward(loss).unwrap().wrt(w);
    let expected = (0..2).map(|i| xs[i] * (w0 * xs[i] - ts[i])).sum::<f64>(); // 2·mean = sum for n=2
    assert_eq!(g.len(), 1);
    assert!((g[0] - expected).abs() < 1e-12);
}

#[test]
fn disconnected_parameter_has_zero_gradient() {
    let mut tape = Tape::<f32>::new();
    let used = tape.param(t32(vec![2], vec![1.0, 2.0])).unwrap();
    let unused = tape.param(t32(vec![3], vec![1.0, 2.0, 3.0])).unwrap();
    let loss = tape.sum(used).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(unused), vec![0.0; 3]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(vec![2], vec![1.0, 2.0])).unwrap();
    let loss = tape.sum(x).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.backward(loss).unwrap_err(), TensorError::TapeConsumed);
    assert!(tape.is_empty());
    tape.reset();
    let x = tape.param(t32(vec![2], vec![1.0, 2.0])).unwrap();
    let loss = tape.sum(x).unwrap();
    assert!(tape.backward(loss).is_ok());
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(vec![2], vec![1.0, 2.0])).unwrap();
    assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn non_finite_is_surfaced() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(vec![1], vec![f32::MAX])).unwrap();
    assert_eq!(
        tape.add(x, x).unwrap_err(),
        TensorError::NonFinite { op: "elementwise" }
    );
    assert!(matches!(
        tape.param(t32(vec![1], vec![f32::NAN])),
        Err(TensorError::NonFinite { .. })
    ));
}

#[test]
fn crop_and_reshape() {
    let data: Vec<f64> = (0..2 * 4 * 5).map(f64::from).collect();
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(vec![2, 4, 5], data).unwrap()).unwrap();
    let c = tape.crop(x, 1, 2, 2, 3).unwrap();
    assert_eq!(tape.shape(c), &[2, 2, 3]);
    assert_eq!(&tape.value(c)[..3], &[7.0, 8.0, 9.0]);
    assert_eq!(tape.value(c)[6], 27.0);
    let r = tape.reshape(c, vec![12]).unwrap();
    let s = tape.sum(r).unwrap();
    let g = tape.backward(s).unwrap().wrt(x);
    assert_eq!(g.iter().sum::<f64>(), 12.0);
    assert_eq!(g[7], 1.0);
    assert_eq!(g[0], 0.0);
}

#[test]
fn finite_difference_examples() {
    let x = Tensor::new(vec![4], vec![0.3f64, -1.2, 2.0, 0.7]).unwrap();
    let linear = |t: &mut Tape<f64>, v: Var| {
        let s = t.mul_scalar(v, 3.0)?;
        t.sum(s)
    };
    assert!(finite_difference_check(linear, &x, 1e-6).unwrap() < 1e-6);

    let x32 = Tensor::new(vec![4], vec![0.3f32, -1.2, 2.0, 0.7]).unwrap();
    let silu_mean = |t: &mut Tape<f32>, v: Var| {
        let s = t.silu(v)?;
        t.mean(s)
    };
    assert!(finite_difference_check(silu_mean, &x32, 1e-3).unwrap() < 1e-3);

    let constant = |t: &mut Tape<f64>, _v: Var| t.constant(Tensor::scalar(4.0));
    assert_eq!(finite_difference_check(constant, &x, 1e-6).unwrap(), 0.0);
}

#[test]
fn shuffle_backward_is_inverse_permutation() {
    let data: Vec<f32> = (0..8 * 3 * 2).map(|i| i as f32 * 0.5).collect();
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(vec![8, 3, 2], data.clone())).unwrap();
    let y = tape.pixel_shuffle(x, 2).unwrap();
    let coeffs = tape.constant(t32(vec![2, 6, 4], tape.value(y).to_vec())).unwrap();
    let p = tape.mul(y, coeffs).unwrap();
    let loss = tape.sum(p).unwrap();
    // d/dx Σ y·y_const = y_const unshuffled = x
    assert_eq!(tape.backward(loss).unwrap().wrt(x), data);
}
