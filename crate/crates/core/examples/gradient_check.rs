//! Reverse-mode gradients of a small graph, checked by central differences.

use hitsr::{Tensor, Var};

fn loss(a: &Var, b: &Var) -> hitsr::Result<Var> {
    Ok(a.matmul(b)?.gelu().sum())
}

fn main() -> hitsr::Result<()> {
    let a0 = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
    let b0 = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.71).cos());
    let (a, b) = (Var::param(a0.clone()), Var::param(b0.clone()));
    let grads = loss(&a, &b)?.backward()?;
    let ga = grads.get(&a).expect("a is a leaf");

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..a0.len() {
        let mut up = a0.clone();
        up.data_mut()[i] += step;
        let mut down = a0.clone();
        down.data_mut()[i] -= step;
        let f = |t: Tensor| loss(&Var::constant(t), &Var::constant(b0.clone())).map(|v| v.value().item());
        let numeric = (f(up)? - f(down)?) / (2.0 * step);
        worst = worst.max((numeric - ga.data()[i]).abs());
    }
    println!("dL/da = {:?}", ga.data());
    println!("largest deviation from finite differences: {worst:.2e}");
    Ok(())
}
