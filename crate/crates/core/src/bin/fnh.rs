fn main() {
    env_logger::init();
    fnh_tts::cli::main_with_exit()
}
