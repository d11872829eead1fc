//! Each chapter of the guide is a module here so `cargo test` runs its
//! code blocks.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(introduction, "introduction.md");
chapter!(schedules, "schedules.md");
chapter!(phi, "phi.md");
chapter!(noise, "noise.md");
chapter!(models, "models.md");
chapter!(solvers, "solvers.md");
chapter!(grids, "grids.md");
chapter!(harness, "harness.md");
chapter!(cli, "cli.md");
