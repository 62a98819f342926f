import torch

# the suite measures wall time in a few places; a single pinned thread keeps
# those numbers stable and avoids oversubscription on small machines
torch.set_num_threads(1)
