//! Command-line front end (placeholder while modules land).

pub fn run() -> i32 {
    0
}
