use std::process::ExitCode;

fn main() -> ExitCode {
    // Outputs like `analyze --kv` exist to be piped. Rust ignores SIGPIPE,
    // which turns `wsi ... | head` into a panic mid-print; restore the
    // default so the process dies quietly like any other filter.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    ExitCode::from(wsi::cli::main_entry(std::env::args()) as u8)
}
