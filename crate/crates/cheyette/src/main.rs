fn main() {
    std::process::exit(cheyette::run(std::env::args_os()));
}
