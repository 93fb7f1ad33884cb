use noisylab::exec::init_threads_from_env;

fn main() {
    init_threads_from_env();
    std::process::exit(noisylab_cli::run(std::env::args_os()));
}
