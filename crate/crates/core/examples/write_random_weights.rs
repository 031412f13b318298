//! Writes a seeded random CDWT file: `write_random_weights <out> [seed]`.

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().ok_or("usage: write_random_weights <out> [seed]")?;
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    convdesc_core::synthetic::random_weights(seed).save(std::path::Path::new(&out))?;
    Ok(())
}
