use onda_core::compiler::{self, interp, Compiled, Home};
use onda_core::isa::Reg;
use onda_core::qvm::{Limits, Machine, RunResult};

fn build(src: &str) -> Compiled {
    match compiler::compile(src) {
        Ok(c) => c,
        Err(d) => panic!("{}", d.render("test.onda")),
    }
}

fn run(c: &Compiled) -> RunResult {
    let r = Machine::new(&c.program, Limits::default()).run().unwrap();
    assert!(r.unhalted_mass < 1e-12 && r.crashed_mass < 1e-12, "did not halt cleanly");
    r
}

/// Printed values of a program whose run is deterministic.
fn classical(src: &str) -> Vec<u32> {
    let r = run(&build(src));
    assert_eq!(r.ensemble.len(), 1, "expected a single history");
    assert!((r.ensemble[0].prob - 1.0).abs() < 1e-9);
    r.ensemble[0].values()
}

fn reference(src: &str) -> Vec<u32> {
    interp::interpret_reference(&compiler::parse(src).unwrap()).unwrap()
}

fn agree(src: &str) -> Vec<u32> {
    let got = classical(src);
    assert_eq!(got, reference(src), "compiled and reference disagree");
    got
}

#[test]
fn arithmetic_and_memory() {
    let v = agree(
        "int g = 5; int arr[4] = {1, 2, 3, 4};
         int main() {
             int a = 3; int b = a * 7 - 1; a += b; a -= 2;
             b = b / 3 + a % 4;
             arr[2] += a; arr[a & 3] = 9;
             g = g * g;
             unsigned int u = ~0; u = u >> 28;
             float f = 1.5; f = f * 2.25 + a;
             print a; print b; print arr[2]; print arr[0] + arr[1]; print g; print u; print f;
             print a < b; print a >= b; print -a > 0; print u < 3;
             return 0;
         }",
    );
    assert_eq!(v[0], 21);
}

#[test]
fn many_spilled_locals() {
    let mut body = String::new();
    for i in 0..14 {
        body += &format!("int v{i} = {i} * 3; ");
    }
    for i in 0..13 {
        body += &format!("v{} += v{i}; ", i + 1);
    }
    body += "print v13;";
    agree(&format!("int main() {{ {body} }}"));
}

#[test]
fn branches_and_loops() {
    let v = agree(
        "int main() {
             int i = 0; int s = 0;
             do {
                 if (i % 3 == 0) { s += i; } else if (i % 3 == 1) { s += 100; } else { s -= 1; }
                 i += 1;
             } while (i < 10);
             print s;
             int j = 0;
             do { int k = 0; do { s += 1; k += 1; } while (k < j); j += 1; } while (j < 4);
             print s;
             return 0;
         }",
    );
    assert_eq!(v.len(), 2);
}

#[test]
fn calls_copy_restore_and_results() {
    agree(
        "int total;
         int twice(int x) { x = x * 2; return x + 1; }
         void fill(int a[], int n) { int i = 0; do { a[i] = i * n; i += 1; } while (i < n); }
         int sum(int a[], int n) { int i = 0; int s = 0; do { s += a[i]; i += 1; } while (i < n); return s; }
         int main() {
             int y = 5;
             int z = twice(y) + twice(3);
             int arr[6];
             fill(arr, 6);
             print y; print z; print sum(arr, 6); print sqrt(1000); print sqrt(z * z);
             return 0;
         }",
    );
}

#[test]
fn statements_leave_no_garbage() {
    let c = build(
        "int main() {
             int a = 3; int b = 4; int arr[3];
             a += b * 2 + 1; b -= a; arr[1] += a ^ b;
             if (a > b) { arr[0] += 1; } else { arr[2] -= b; }
             a = a + 7; a = ~a; a = -a; a = a ^ (b & 6);
             print a;
             return 0;
         }",
    );
    let r = run(&c);
    let cfg = &r.ensemble[0].state.branches[0].0;
    assert_eq!(cfg.regs[Reg::GRP.index()], c.program.garbage_base);
    for t in compiler::lower::TEMPS {
        assert_eq!(cfg.regs[t.index()], 0, "{t} not cleared");
    }
    assert_eq!(cfg.regs[Reg::TUR.index()], 0);
}

#[test]
fn hadamard_fan_out_and_interference() {
    let r = run(&build("int main() { int a = 0 @ 6; print a; }"));
    assert_eq!(r.events[0].dist.len(), 64);
    for p in r.events[0].dist.values() {
        assert!((p - 1.0 / 64.0).abs() < 1e-12);
    }
    // H then H is the identity.
    assert_eq!(classical("int main() { int a = 0 @ 3; a @= 3; print a; }"), vec![0]);
    // Phase kickback between two Hadamards flips the result.
    assert_eq!(classical("int main() { int a = 1 @ 1; a #= 1; a @= 1; print a; }"), vec![0]);
    assert_eq!(classical("int main() { int a = 0 @ 1; a #= 1; a = a @ 1; print a; }"), vec![1]);
}

#[test]
fn superposed_if_arms_interfere() {
    // Both arms touch b, the condition is uncomputed, and the second
    // Hadamard recombines the branches.
    let src = "int main() {
                   int a = 0 @ 1; int b = 0;
                   if (a == 1) { b += 2; } else { b += 5; b -= 3; }
                   b -= 2;
                   a @= 1;
                   print a; print b;
               }";
    assert_eq!(classical(src), vec![0, 0]);
}

#[test]
fn homes_prefer_saved_registers() {
    let c = build("int g; int main() { int a = 1; int arr[2]; print a; }");
    assert_eq!(c.lowered.home(Some("main"), "a"), Some(Home::Reg(Reg::saved(0))));
    assert_eq!(c.lowered.home(None, "g"), Some(Home::Mem(0)));
    assert!(matches!(c.lowered.home(Some("main"), "arr"), Some(Home::Array(_))));
}

#[test]
fn diagnostics() {
    let err = |src: &str| compiler::compile(src).unwrap_err().to_string();
    assert!(err("int f(int x) { return f(x); } int main() { print f(1); }").contains("recursion"));
    assert!(err("int f(int a, int b, int c, int d, int e) { return a; } int main() { print f(1,2,3,4,5); }")
        .contains("at most 4"));
    assert!(err("int main() { int a = 1; a += 1; int b = a << a; print b; }").contains("shift amount"));
}

#[test]
fn computed_argument_reading_a_by_reference_argument() {
    let v = agree(
        "int h(int a, int b) { int r = a ^ b; a += 4; return r; }
         int bump(int xs[], int y) { xs[0] += y; return y; }
         int arr[2] = {1, 2};
         int main() {
             int v0 = -56; int v1 = 0;
             v1 = h(v0, v0 ^ 3); print v1;
             v1 = h(v0, v0 ^ 3); print v1; print v0;
             v1 = bump(arr, arr[0] + 1); v1 = bump(arr, arr[0] + 1);
             print v1; print arr[0];
             return 0;
         }",
    );
    assert_eq!(&v[..3], &[3, 3, (-48i32) as u32]);
}
