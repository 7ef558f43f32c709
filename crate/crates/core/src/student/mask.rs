use super::MaskOption;

/// Steps a query at step `s` may attend to, in sequence order (`S` first).
pub fn allowed_steps(option: MaskOption, steps: usize, s: usize) -> Vec<usize> {
    match option {
        MaskOption::M1 => vec![s],
        MaskOption::M2 if s < steps => vec![s + 1, s],
        MaskOption::M3 if s < steps => vec![steps, s],
        MaskOption::M2 | MaskOption::M3 => vec![s],
        MaskOption::M4 => (s..=steps).rev().collect(),
    }
}

/// Layers at or above `n_history` never see history.
pub fn effective_option(option: MaskOption, layer: usize, n_history: usize) -> MaskOption {
    if layer >= n_history {
        MaskOption::M1
    } else {
        option
    }
}

/// Attention mask of the query block at step `s_query` against all `steps`
/// input blocks (ordered `S, S−1, …, 1`), as a row-major
/// `[tokens × steps·tokens]` boolean matrix. The current block is always
/// allowed.
pub fn build_mask(
    steps: usize,
    s_query: usize,
    option: MaskOption,
    layer: usize,
    n_history: usize,
    tokens: usize,
) -> Vec<bool> {
    let allowed = allowed_steps(effective_option(option, layer, n_history), steps, s_query);
    let width = steps * tokens;
    let mut row = vec![false; width];
    for j in 0..steps {
        if allowed.contains(&(steps - j)) {
            row[j * tokens..(j + 1) * tokens].fill(true);
        }
    }
    let mut out = Vec::with_capacity(tokens * width);
    for _ in 0..tokens {
        out.extend_from_slice(&row);
    }
    out
}

/// Full `[S·tokens × S·tokens]` mask for the parallel training pass.
pub fn train_mask(steps: usize, option: MaskOption, layer: usize, n_history: usize, tokens: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(steps * tokens * steps * tokens);
    for j in 0..steps {
        out.extend(build_mask(steps, steps - j, option, layer, n_history, tokens));
    }
    out
}
