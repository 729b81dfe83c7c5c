"""hke: hierarchy elicitation from odd-one-out judgments.

The package turns ternary "pick the odd one out" judgments into a concept
hierarchy over a set of items. It embeds items with a small network trained
on a doubled triplet objective, asks questions chosen to be informative about
uncertain regions, and reads the hierarchy off the embedding with divisive
clustering.

Modules:
    dataset       items, synthetic stimuli, latent ground-truth trees, file I/O
    embedding     the embedding network, its loss, and plain SGD training
    hierarchy     divisive clustering, tree export, dendrogram purity
    elicitation   question generation, response pooling, evidence filtering
    participants  simulated responders that answer from a latent tree
    experiment    end-to-end runs, ablation arms, metrics output
    service       HTTP annotation sessions with durable state
    cli           the `hke` command
"""

__version__ = "0.1.0"
