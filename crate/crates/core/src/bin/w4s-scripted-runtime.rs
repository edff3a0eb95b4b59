//! Scripted sandbox runtime: speaks the workflow IPC protocol on stdin/stdout
//! and follows `#@` directives instead of executing workflow code.
//!
//! Usage: `w4s-scripted-runtime --scratch <dir> --seed <n>`

fn main() {
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        match (flag.as_str(), args.next()) {
            ("--scratch", Some(dir)) => {
                if let Err(e) = std::env::set_current_dir(&dir) {
                    eprintln!("cannot enter scratch dir {dir}: {e}");
                    std::process::exit(2);
                }
            }
            ("--seed", Some(_)) => {}
            _ => {
                eprintln!("usage: w4s-scripted-runtime --scratch <dir> --seed <n>");
                std::process::exit(2);
            }
        }
    }
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let code = w4s::sandbox::scripted::serve(&mut stdin.lock(), &mut stdout.lock());
    std::process::exit(code);
}
