//! Drives the command-line interface in-process: generate a toy dataset,
//! train briefly, score the checkpoint and render an orbit.
//!
//! ```text
//! cargo run --release --example cli_pipeline -- /tmp/kplanes-cli
//! ```

use kplanes::cli::run_from;

fn main() {
    let root = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "kplanes-cli".into()));
    let p = |name: &str| root.join(name).display().to_string();
    std::fs::create_dir_all(&root).expect("output directory");
    std::fs::write(
        root.join("config.toml"),
        "[sampler]\nkind = \"uniform\"\nsamples = 32\n\n[schedule]\niterations = 200\n\n[output]\nlog_every = 50\n",
    )
    .expect("config");
    let steps: Vec<Vec<String>> = vec![
        vec!["toygen".into(), "--kind".into(), "static".into(), "--size".into(), "32".into(), "--out".into(), p("data")],
        vec!["train".into(), "--config".into(), p("config.toml"), "--data".into(), p("data"), "--out".into(), p("run")],
        vec!["eval".into(), "--ckpt".into(), p("run/ckpt_000200.kplckpt"), "--data".into(), p("data"), "--split".into(), "val".into()],
        vec!["render".into(), "--ckpt".into(), p("run/ckpt_000200.kplckpt"), "--camera-path".into(), "orbit:4".into(), "--width".into(), "32".into(), "--height".into(), "32".into(), "--out".into(), p("orbit")],
    ];
    for args in steps {
        println!("$ kplanes {}", args.join(" "));
        let code = run_from(std::iter::once("kplanes".to_string()).chain(args));
        if code != 0 {
            std::process::exit(code);
        }
    }
}
