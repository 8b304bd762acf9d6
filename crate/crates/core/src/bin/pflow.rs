fn main() {
    let code = pflow::harness::run_cli(std::env::args_os());
    std::process::exit(code);
}
