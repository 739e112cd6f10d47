fn main() {
    std::process::exit(ecs_motion::cli::run(std::env::args_os()));
}
