use dco_core::stats::*;
use dco_core::Alpha;

#[test]
fn print_values() {
    for (x, a, b) in [(0.3, 2.5, 4.0), (0.77, 9.0, 0.6), (0.02, 0.3, 0.7), (0.5, 30.0, 12.5)] {
        println!("beta {x} {a} {b} = {:.15}", regularized_incomplete_beta(x, a, b).unwrap());
    }
    let a = vec![1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30, 0.90, 1.10, 2.01];
    let b = vec![0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29, 0.75, 1.11, 2.00];
    let pairs = PairedSamples::new(a, b).unwrap();
    println!("wilcoxon exact = {:.10}", wilcoxon_signed_rank(&pairs, WilcoxonMode::Exact).p_value);
    println!("wilcoxon approx = {:.10}", wilcoxon_signed_rank(&pairs, WilcoxonMode::NormalApprox).p_value);
    let v = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
    for p in [0.1, 0.25, 0.5, 0.9, 0.95] {
        println!("pct {p} = {:.10}", percentile(&v, p).unwrap());
    }
    for (m, num, den) in [(99usize, 1u64, 5u64), (112, 3, 20), (49, 1, 10)] {
        println!("rank m={m} a={num}/{den} = {}", Alpha::rational(num, den).unwrap().conformal_rank(m));
    }
}
