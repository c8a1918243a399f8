//! Compiles every Rust snippet in `book/src` as a doctest.
//!
//! Nothing here is meant to be used; `cargo test -p modwt-book` is the point.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub struct $name;
        )*
    };
}

chapters! {
    Introduction => "introduction.md",
    Data => "data.md",
    Propensity => "propensity.md",
    Balance => "balance.md",
    Outcome => "outcome.md",
    Sensitivity => "sensitivity.md",
    Pipeline => "pipeline.md",
}
