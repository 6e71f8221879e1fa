import django
from django.conf import settings


def configure_django():
    """
    Minimal settings so DRF serializers can validate experiment configs outside a
    Django project.
    """
    if settings.configured:
        return
    settings.configure(
        DEBUG=False,
        USE_I18N=False,
        USE_TZ=True,
        SECRET_KEY="coop-diffusion-cli",
        INSTALLED_APPS=("django.contrib.contenttypes", "rest_framework"),
    )
    django.setup()
