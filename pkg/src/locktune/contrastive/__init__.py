from .loss import LogitScale, assert_unit_norm, contrastive_step_loss, info_nce, similarity_logits

__all__ = ["LogitScale", "assert_unit_norm", "contrastive_step_loss", "info_nce", "similarity_logits"]
