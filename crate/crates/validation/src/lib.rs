//! Holds the `acceptance` test target. Run it with
//! `cargo test -p regime-stop-validation --test acceptance`.
