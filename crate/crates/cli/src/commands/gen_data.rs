use super::Context;
use crate::dataset::{generate, MANIFEST_FILE};
use crate::error::CliResult;

pub fn gen_data(ctx: &Context) -> CliResult<()> {
    let out = ctx.output()?;
    let manifest = generate(&ctx.config, &out)?;
    out.write_metadata(&ctx.metadata("gen-data")?)?;
    eprintln!(
        "wrote {} demonstrations ({} files) to {}",
        manifest.entries.len(),
        manifest.files.len() + 1,
        out.join(MANIFEST_FILE).display()
    );
    Ok(())
}
