fn main() {
    std::process::exit(oneseg::run_cli())
}
