fn main() -> anyhow::Result<()> {
    mlcsc_cli::cli::run(std::env::args().collect())
}
