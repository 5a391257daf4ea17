//! Writes the two-state toggle model to stdout in the model JSON schema.

fn main() {
    print!("{}", pips_core::fixtures::toggle2().to_json());
}
