// A custom grammar, its normal lines, and each kind of injected anomaly.

use logmlm::synthgen::{generate_normal, inject_anomalies, write_tagged, AnomalyKind, LogGrammar};

const GRAMMAR: &str = "
seed 3
slot host web db cache
slot state up:0.8 down:0.2
template 0.6 [warn] host {host} is {state} after {int} checks
template 0.4 job {int} finished on {host}
reserved qzx jqx
";

fn main() {
    let grammar = LogGrammar::parse(GRAMMAR).unwrap();
    let normal = generate_normal(&grammar, 8, 0).unwrap();
    write_tagged(std::io::stdout(), &normal).unwrap();

    for kind in AnomalyKind::ALL {
        let lines = inject_anomalies(&grammar, &normal, &[kind], 0.5, 11).unwrap();
        println!("-- {kind}");
        for l in lines.iter().filter(|l| l.kind.is_some()) {
            println!("{:<44} corrupted at {:?}", l.text, l.corrupted_positions);
        }
    }
}
