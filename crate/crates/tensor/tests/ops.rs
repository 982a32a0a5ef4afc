use cgtn_tensor::{ReduceKind, Tape, Tensor, TensorError};

fn t64(shape: &[usize], values: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), values).unwrap()
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let i2 = tape.constant(t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = tape.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let out = tape.matmul(i2, a).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_row_by_column() {
    let mut tape = Tape::new();
    let a = tape.constant(t64(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t64(&[2, 1], &[3.0, 4.0]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 1]);
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![4, 2]));
    match tape.matmul(a, b) {
        Err(TensorError::ShapeMismatch { op: "matmul", .. }) => {}
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn relu_clamps_negatives() {
    let mut tape = Tape::new();
    let x = tape.constant(t64(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn add_zero_is_identity() {
    let mut tape = Tape::new();
    let x = tape.constant(t64(&[2, 2], &[1.5, -2.0, 0.25, 7.0]));
    let z = tape.constant(Tensor::zeros(vec![2, 2]));
    let y = tape.add(x, z).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
}

#[test]
fn add_broadcasts_trailing_axes() {
    let mut tape = Tape::new();
    let x = tape.constant(t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = tape.constant(t64(&[3], &[10.0, 20.0, 30.0]));
    let y = tape.add(x, b).unwrap();
    assert_eq!(tape.value(y).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
}

#[test]
fn add_rejects_incompatible_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(vec![2, 3]));
    let y = tape.constant(Tensor::zeros(vec![2]));
    match tape.add(x, y) {
        Err(TensorError::IncompatibleBroadcast { .. }) => {}
        other => panic!("expected broadcast error, got {other:?}"),
    }
}

#[test]
fn sum_all_axes() {
    let mut tape = Tape::new();
    let x = tape.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let s = tape.sum(x).unwrap();
    assert_eq!(tape.value(s).shape(), &[] as &[usize]);
    assert_eq!(tape.value(s).item().unwrap(), 10.0);
}

#[test]
fn reduce_over_single_axis() {
    let mut tape = Tape::new();
    let x = tape.constant(t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let rows = tape.reduce(ReduceKind::Sum, x, Some(&[1])).unwrap();
    assert_eq!(tape.value(rows).shape(), &[2]);
    assert_eq!(tape.value(rows).data(), &[6.0, 15.0]);
    let cols = tape.reduce(ReduceKind::Mean, x, Some(&[0])).unwrap();
    assert_eq!(tape.value(cols).data(), &[2.5, 3.5, 4.5]);
}

#[test]
fn mean_over_empty_axis_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(vec![3, 0]));
    match tape.reduce(ReduceKind::Mean, x, Some(&[1])) {
        Err(TensorError::EmptyReduction { op: "mean", .. }) => {}
        other => panic!("expected empty reduction error, got {other:?}"),
    }
}

#[test]
fn reduce_rejects_bad_axis() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(vec![2, 2]));
    match tape.reduce(ReduceKind::Sum, x, Some(&[2])) {
        Err(TensorError::InvalidAxis { axis: 2, rank: 2 }) => {}
        other => panic!("expected invalid axis, got {other:?}"),
    }
}

#[test]
fn max_ties_route_to_lowest_index() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[4], &[1.0, 5.0, 5.0, 2.0]));
    let m = tape.max(x).unwrap();
    assert_eq!(tape.value(m).item().unwrap(), 5.0);
    tape.backward(m).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 9.0, -1.0]));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[3], &[1.0, 2.0, 3.0]));
    let sq = tape.square(x).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn constant_loss_yields_zero_gradients() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[2], &[3.0, 4.0]));
    let c = tape.constant(Tensor::scalar(7.0));
    tape.backward(c).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[2], &[1.0, 2.0]));
    let y = tape.square(x).unwrap();
    match tape.backward(y) {
        Err(TensorError::NonScalarLoss { shape }) => assert_eq!(shape, vec![2]),
        other => panic!("expected non-scalar loss error, got {other:?}"),
    }
}

#[test]
fn second_backward_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[2], &[1.0, 2.0]));
    let sq = tape.square(x).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    match tape.backward(loss) {
        Err(TensorError::TapeConsumed) => {}
        other => panic!("expected consumed tape error, got {other:?}"),
    }
}

#[test]
fn recording_after_backward_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[1], &[2.0]));
    let loss = tape.sum(x).unwrap();
    tape.backward(loss).unwrap();
    match tape.square(x) {
        Err(TensorError::TapeConsumed) => {}
        other => panic!("expected consumed tape error, got {other:?}"),
    }
}

#[test]
fn gradients_accumulate_across_reuse() {
    // y = x*x + x used twice and three times: dy/dx = 2x + 1.
    let mut tape = Tape::new();
    let x = tape.param(t64(&[1], &[5.0]));
    let xx = tape.mul(x, x).unwrap();
    let y = tape.add(xx, x).unwrap();
    let loss = tape.sum(y).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[11.0]);
}

#[test]
fn broadcast_add_gradient_reduces_to_operand_shape() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[2, 3], &[1.0; 6]));
    let b = tape.param(t64(&[3], &[0.1, 0.2, 0.3]));
    let y = tape.add(x, b).unwrap();
    let loss = tape.sum(y).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
}

#[test]
fn scale_and_reshape_chain() {
    let mut tape = Tape::new();
    let x = tape.param(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let flat = tape.reshape(x, vec![4]).unwrap();
    let scaled = tape.scale(flat, 3.0).unwrap();
    let loss = tape.sum(scaled).unwrap();
    assert_eq!(tape.value(scaled).data(), &[3.0, 6.0, 9.0, 12.0]);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0; 4]);
}

#[test]
fn tensor_construction_validates_length() {
    match Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]) {
        Err(TensorError::DataLength {
            expected: 6,
            got: 5,
        }) => {}
        other => panic!("expected data length error, got {other:?}"),
    }
}

#[test]
fn scalar_tensor_roundtrip() {
    let s = Tensor::<f32>::scalar(2.5);
    assert_eq!(s.rank(), 0);
    assert_eq!(s.numel(), 1);
    assert_eq!(s.item().unwrap(), 2.5);
}

#[test]
fn foreign_node_id_is_detached() {
    let mut tape_a = Tape::<f64>::new();
    let x = tape_a.param(t64(&[1], &[1.0]));
    let _ = x;
    let mut tape_b = Tape::<f64>::new();
    match tape_b.backward(x) {
        Err(TensorError::DetachedGraph) => {}
        other => panic!("expected detached graph error, got {other:?}"),
    }
}
