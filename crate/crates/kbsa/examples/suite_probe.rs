// Scratch tool: runs one registered validation suite by name. Not shipped.
fn main() {
    let name = std::env::args().nth(1).unwrap();
    let suite = kbsa::validate::suite_by_name(&name).unwrap();
    let t0 = std::time::Instant::now();
    let report = suite.run().unwrap();
    for line in report.summary_lines() {
        if line.starts_with("FAIL") || line.starts_with("suite") {
            println!("{line}");
        }
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
