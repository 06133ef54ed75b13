"""
WSGI config for the flowlab project.

Only the admin (run history) is served over HTTP.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "flowlab_project.settings")

application = get_wsgi_application()
