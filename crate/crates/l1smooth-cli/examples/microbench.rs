use nalgebra::DMatrix;
use std::time::Instant;

fn main() {
    let n = 1024usize;
    let pz = 1984usize;
    let theta = DMatrix::<f64>::from_fn(pz, n, |i, j| ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.5);
    let p = {
        let a = DMatrix::<f64>::from_fn(n, n, |i, j| ((i * 31 + j * 17) % 97) as f64 / 970.0);
        &a * a.transpose() + DMatrix::identity(n, n)
    };

    let t0 = Instant::now();
    let tp = &theta * &p;
    println!("theta * p        : {:?}", t0.elapsed());

    let t0 = Instant::now();
    let s = &tp * theta.transpose() + DMatrix::<f64>::identity(pz, pz);
    println!("(tp) * theta^T   : {:?}", t0.elapsed());

    let t0 = Instant::now();
    let chol = s.clone().cholesky().unwrap();
    println!("cholesky(s)      : {:?}", t0.elapsed());

    let t0 = Instant::now();
    let kt = chol.solve(&tp);
    println!("chol.solve(tp)   : {:?}", t0.elapsed());

    let t0 = Instant::now();
    let k = kt.transpose();
    println!("transpose        : {:?}", t0.elapsed());

    let t0 = Instant::now();
    let ks = &k * &s;
    println!("k * s            : {:?}", t0.elapsed());

    let t0 = Instant::now();
    let _p2 = &p - &ks * k.transpose();
    println!("p - ks k^T       : {:?}", t0.elapsed());

    let t0 = Instant::now();
    let _ = s.clone().cholesky().unwrap();
    println!("chol again       : {:?}", t0.elapsed());
}
