"""SparseCut: desk-scale multimodal fusion reference stack.

Three pieces, all runnable on a laptop in float64:

* multi-level shortcut connections that feed intermediate vision-encoder
  states into chosen decoder layers instead of only prepending the final
  encoder state to the prompt,
* a cross-resolution fusion adapter that folds high-resolution tile tokens
  into the low-resolution token sequence without growing context length,
* an analytic computational cost model whose multiply-accumulate counts are
  certified against an instrumented run of the actual forward pass.
"""

__version__ = "0.1.0"
